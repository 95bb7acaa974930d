#include "cli.hpp"

#include "jscc/trainer.hpp"

#include <iostream>

int main(int argc, char** argv) {
    jscc::tune_allocator();
    return jscc::cli::run(argc, argv, std::cout, std::cerr);
}
