#include "jscc/separation.hpp"

#include <fcntl.h>
#include <png.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

extern char** environ;

namespace jscc::separation {

namespace {

constexpr auto kMaxBits = std::numeric_limits<std::uint64_t>::max();

std::uint64_t budget_from_symbols(double symbols, double snr_db) {
    if (std::isnan(snr_db)) throw std::invalid_argument("capacity_bits: SNR is NaN");
    if (snr_db == std::numeric_limits<double>::infinity()) return kMaxBits;
    const double bits = symbols * std::log2(1.0 + std::pow(10.0, snr_db / 10.0));
    if (bits >= 18446744073709551615.0) return kMaxBits;
    return static_cast<std::uint64_t>(std::floor(bits));
}

void check_single(const ImageBatch& image) {
    if (image.count != 1) throw std::invalid_argument("compressor: expected a single image");
    if (image.peak != 255.0f) throw std::invalid_argument("compressor: expected peak 255");
    if (image.channels != 1 && image.channels != 3)
        throw std::invalid_argument("compressor: expected 1 or 3 channels");
}

std::uint8_t to_u8(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FeatureUnavailableError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw FeatureUnavailableError("cannot write " + p.string());
}

std::optional<std::filesystem::path> resolve(const std::string& exe) {
    namespace fs = std::filesystem;
    if (exe.find('/') != std::string::npos) {
        if (::access(exe.c_str(), X_OK) == 0) return fs::path(exe);
        return std::nullopt;
    }
    const char* path = std::getenv("PATH");
    if (!path) return std::nullopt;
    std::istringstream dirs(path);
    std::string dir;
    while (std::getline(dirs, dir, ':')) {
        if (dir.empty()) continue;
        const fs::path candidate = fs::path(dir) / exe;
        if (::access(candidate.c_str(), X_OK) == 0) return candidate;
    }
    return std::nullopt;
}

// Runs argv[0] with stdout and stderr discarded; returns the exit status.
int run(const std::vector<std::string>& args) {
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw FeatureUnavailableError("cannot start " + args[0] + ": " + std::strerror(rc));
    int status = 0;
    if (::waitpid(pid, &status, 0) < 0) throw FeatureUnavailableError("waitpid failed for " + args[0]);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ImageBatch read_ppm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    const std::string magic = token();
    if (magic != "P6" && magic != "P5") throw FeatureUnavailableError("decoder output is not a binary PNM file");
    const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
    if (maxval != 255) throw FeatureUnavailableError("decoder output is not 8-bit");
    ++pos;  // single whitespace before the raster
    const int c = magic == "P6" ? 3 : 1;
    const std::size_t n = static_cast<std::size_t>(w) * h * c;
    if (bytes.size() < pos + n) throw FeatureUnavailableError("truncated decoder output");
    ImageBatch out{1, c, h, w, 255.0f, std::vector<float>(n)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k)
                out.pixels[(static_cast<std::size_t>(k) * h + y) * w + x] =
                    bytes[pos + (static_cast<std::size_t>(y) * w + x) * c + k];
    return out;
}

std::filesystem::path fresh_dir(const std::filesystem::path& base) {
    static std::atomic<unsigned> counter{0};
    const auto root = base.empty() ? std::filesystem::temp_directory_path() : base;
    auto dir = root / ("jscc-bpg-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
    return dir;
}

struct DirGuard {
    std::filesystem::path dir;
    ~DirGuard() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
};

}  // namespace

std::uint64_t capacity_bits(double rho, std::int64_t source_dim, double snr_db) {
    if (!(rho > 0.0) || source_dim <= 0) throw std::invalid_argument("capacity_bits: rho and N must be positive");
    return budget_from_symbols(rho * static_cast<double>(source_dim), snr_db);
}

std::uint64_t capacity_bits(const Rational& rho, std::int64_t source_dim, double snr_db) {
    if (rho.num <= 0 || rho.den <= 0 || source_dim <= 0)
        throw std::invalid_argument("capacity_bits: rho and N must be positive");
    return budget_from_symbols(static_cast<double>(rho.num * source_dim) / static_cast<double>(rho.den), snr_db);
}

void write_png(const std::filesystem::path& path, const ImageBatch& image) {
    check_single(image);
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    const int c = image.channels, h = image.height, w = image.width;
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k)
                row[static_cast<std::size_t>(x) * c + k] =
                    to_u8(image.pixels[(static_cast<std::size_t>(k) * h + y) * w + x]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

ImageBatch read_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng failed reading " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = png_get_channels(png, info);
    std::vector<png_byte> raster(static_cast<std::size_t>(w) * h * c);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = raster.data() + static_cast<std::size_t>(y) * w * c;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    ImageBatch out{1, c, h, w, 255.0f, std::vector<float>(raster.size())};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k)
                out.pixels[(static_cast<std::size_t>(k) * h + y) * w + x] =
                    raster[(static_cast<std::size_t>(y) * w + x) * c + k];
    return out;
}

BpgCompressor::BpgCompressor(std::string encoder, std::string decoder, std::filesystem::path work_dir)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), work_dir_(std::move(work_dir)) {
    if (!available(encoder_, decoder_))
        throw FeatureUnavailableError("BPG baseline disabled: '" + encoder_ + "' or '" + decoder_ +
                                      "' not found on PATH");
}

bool BpgCompressor::available(const std::string& encoder, const std::string& decoder) {
    return resolve(encoder).has_value() && resolve(decoder).has_value();
}

std::vector<std::uint8_t> BpgCompressor::compress(const ImageBatch& image, int quality) const {
    check_single(image);
    if (quality < min_quality() || quality > max_quality())
        throw std::out_of_range("bpg quality must be in [0, 51]");
    DirGuard guard{fresh_dir(work_dir_)};
    const auto png = guard.dir / "in.png", bpg = guard.dir / "out.bpg";
    write_png(png, image);
    const int rc = run({encoder_, "-q", std::to_string(51 - quality), "-o", bpg.string(), png.string()});
    if (rc != 0) throw FeatureUnavailableError(encoder_ + " exited with status " + std::to_string(rc));
    return read_file(bpg);
}

ImageBatch BpgCompressor::decompress(const std::vector<std::uint8_t>& data) const {
    DirGuard guard{fresh_dir(work_dir_)};
    const auto bpg = guard.dir / "in.bpg", ppm = guard.dir / "out.ppm";
    write_file(bpg, data);
    const int rc = run({decoder_, "-o", ppm.string(), bpg.string()});
    if (rc != 0) throw FeatureUnavailableError(decoder_ + " exited with status " + std::to_string(rc));
    return read_ppm(ppm);
}

namespace {
constexpr std::uint8_t kQuantMagic[3] = {'J', 'Q', 'Z'};
}

std::vector<std::uint8_t> QuantizingCompressor::compress(const ImageBatch& image, int quality) const {
    check_single(image);
    if (quality < min_quality() || quality > max_quality()) throw std::out_of_range("quantize quality must be in [1, 8]");
    if (image.height > 0xffff || image.width > 0xffff) throw std::invalid_argument("quantize: image too large");
    const int drop = 8 - quality;
    std::vector<std::uint8_t> raw(image.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<std::uint8_t>(to_u8(image.pixels[i]) >> drop);
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(8 + packed_size);
    if (compress2(out.data() + 8, &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("quantize: deflate failed");
    out.resize(8 + packed_size);
    out[0] = kQuantMagic[0];
    out[1] = kQuantMagic[1];
    out[2] = kQuantMagic[2];
    out[3] = static_cast<std::uint8_t>(quality);
    out[4] = static_cast<std::uint8_t>(image.height >> 8);
    out[5] = static_cast<std::uint8_t>(image.height & 0xff);
    out[6] = static_cast<std::uint8_t>(image.width >> 8);
    out[7] = static_cast<std::uint8_t>((image.width & 0xff));
    // Channel count rides in the top bit of the quality byte.
    if (image.channels == 3) out[3] |= 0x80;
    return out;
}

ImageBatch QuantizingCompressor::decompress(const std::vector<std::uint8_t>& data) const {
    if (data.size() < 8 || data[0] != kQuantMagic[0] || data[1] != kQuantMagic[1] || data[2] != kQuantMagic[2])
        throw std::invalid_argument("quantize: bad header");
    const int quality = data[3] & 0x7f;
    const int c = (data[3] & 0x80) ? 3 : 1;
    const int h = (data[4] << 8) | data[5], w = (data[6] << 8) | data[7];
    if (quality < 1 || quality > 8) throw std::invalid_argument("quantize: bad quality");
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(c) * h * w);
    uLongf size = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &size, data.data() + 8, static_cast<uLong>(data.size() - 8)) != Z_OK ||
        size != raw.size())
        throw std::invalid_argument("quantize: corrupt payload");
    const int drop = 8 - quality;
    const float mid = drop > 0 ? static_cast<float>(1 << (drop - 1)) : 0.0f;
    ImageBatch out{1, c, h, w, 255.0f, std::vector<float>(raw.size())};
    for (std::size_t i = 0; i < raw.size(); ++i) out.pixels[i] = static_cast<float>(raw[i] << drop) + mid;
    return out;
}

BaselineResult baseline_separation(const Rational& rho, double snr_db, const ImageBatch& image,
                                   const ImageCompressor& codec) {
    check_single(image);
    BaselineResult r;
    r.budget_bits = capacity_bits(rho, static_cast<std::int64_t>(image.image_size()), snr_db);
    auto bits = [](const std::vector<std::uint8_t>& d) { return static_cast<std::uint64_t>(d.size()) * 8; };

    int lo = codec.min_quality(), hi = codec.max_quality();
    auto best = codec.compress(image, lo);
    if (bits(best) > r.budget_bits) {
        r.payload_bits = bits(best);
        return r;
    }
    int best_q = lo;
    // Invariant: quality lo fits; qualities above hi are known not to.
    while (lo < hi) {
        const int mid = lo + (hi - lo + 1) / 2;
        auto data = codec.compress(image, mid);
        if (bits(data) <= r.budget_bits) {
            lo = mid;
            best_q = mid;
            best = std::move(data);
        } else {
            hi = mid - 1;
        }
    }
    const ImageBatch decoded = codec.decompress(best);
    if (!decoded.same_shape(image))
        throw FeatureUnavailableError(codec.name() + " decoder returned an image of a different shape");
    r.feasible = true;
    r.quality = best_q;
    r.payload_bits = bits(best);
    r.psnr = psnr(image, decoded);
    return r;
}

ResultTable baseline_sweep(const ExperimentConfig& cfg, const ImageDataset& test, const std::vector<Rational>& rhos,
                           const std::vector<double>& snrs_db, const ImageCompressor& codec,
                           const std::string& test_set) {
    ResultTable table;
    table.metadata["config_hash"] = hash_hex(architecture_hash(cfg));
    table.metadata["codec"] = codec.name();
    table.metadata["test_set"] = test_set;
    const std::string scheme = "separation-" + codec.name();
    for (const auto& rho : rhos) {
        for (double snr : snrs_db) {
            std::vector<double> values;
            int infeasible = 0;
            for (int i = 0; i < test.size(); ++i) {
                const ImageBatch image = test.range(i, 1).rescaled(255.0f);
                const auto res = baseline_separation(rho, snr, image, codec);
                if (!res.feasible) {
                    ++infeasible;
                    continue;
                }
                values.push_back(res.psnr->value);
            }
            ResultRow row{scheme, rho.reduced(), snr, std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN(), static_cast<int>(values.size())};
            if (!values.empty()) {
                double m = 0.0;
                for (double v : values) m += v;
                m /= static_cast<double>(values.size());
                double var = 0.0;
                for (double v : values) var += (v - m) * (v - m);
                row.mean_psnr = m;
                row.std_psnr = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
            }
            table.rows.push_back(row);
            std::ostringstream key;
            key << "infeasible." << rho.reduced().str() << "@" << snr;
            table.metadata[key.str()] = std::to_string(infeasible);
        }
    }
    return table;
}

}  // namespace jscc::separation
