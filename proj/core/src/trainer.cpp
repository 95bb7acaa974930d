#include "jscc/trainer.hpp"

#include "jscc/checkpoint.hpp"
#include "jscc/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace jscc {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c6964ull;

double mean(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::vector<float>> snapshot_parameters(const codec::JsccModel& model) {
    std::vector<std::vector<float>> out;
    for (const auto& p : model.parameters()) out.emplace_back(p.var.value().begin(), p.var.value().end());
    return out;
}

void restore_parameters(const codec::JsccModel& model, const std::vector<std::vector<float>>& values) {
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ag::Var v = params[i].var;
        std::copy(values[i].begin(), values[i].end(), v.mutable_value().begin());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

int snr_bins(const TrainConfig& t) { return std::max(1, static_cast<int>(std::ceil(t.snr_max - t.snr_min))); }

}  // namespace

StepResult train_step(const codec::JsccModel& model, nn::Adam& optimizer, const ImageBatch& batch,
                      const Condition& cond, double weight, channel::NoiseStream& noise) {
    if (!(weight >= 0.0) || !std::isfinite(weight)) throw std::invalid_argument("train_step: weight must be finite and non-negative");
    const auto info = codec::make_side_info(model.config(), cond.l, cond.snr_db);
    const ag::Var images = codec::to_var(batch);
    StepResult r;
    if (weight == 0.0) {
        // Nothing to learn from this batch; the forward pass only feeds the log.
        ag::NoGradGuard guard;
        const auto t = model.transmit(images, info, &noise);
        r.mse = ag::mse(t.output, images).value()[0];
        r.loss = 0.0;
        return r;
    }
    const auto t = model.transmit(images, info, &noise);
    const ag::Var mse = ag::mse(t.output, images);
    const ag::Var loss = weight == 1.0 ? mse : ag::scale(mse, static_cast<float>(weight));
    r.mse = mse.value()[0];
    r.loss = loss.value()[0];
    if (!std::isfinite(r.loss)) {
        json snap{{"l", cond.l}, {"snr_db", cond.snr_db}, {"weight", weight}, {"loss", std::isnan(r.loss) ? "nan" : "inf"},
                  {"lr", optimizer.lr()}, {"optimizer_steps", optimizer.steps()}};
        json norms = json::object();
        for (const auto& p : model.parameters()) {
            double s = 0.0;
            bool finite = true;
            for (float v : p.var.value()) {
                if (!std::isfinite(v)) finite = false;
                s += static_cast<double>(v) * v;
            }
            norms[p.name] = finite ? json(std::sqrt(s)) : json("non-finite");
        }
        snap["parameter_norms"] = norms;
        throw NonFiniteLossError("non-finite training loss at l=" + std::to_string(cond.l) + ", snr=" +
                                     std::to_string(cond.snr_db) + " dB",
                                 snap.dump(2));
    }
    optimizer.zero_grad();
    ag::backward(loss);
    optimizer.step();
    r.applied = true;
    return r;
}

Validation validate_epoch(const codec::JsccModel& model, const ImageDataset& val, double snr_db,
                          std::uint64_t noise_seed, int batch_size, std::span<const int> levels) {
    if (val.size() == 0) throw std::invalid_argument("validate_epoch: empty validation set");
    if (batch_size <= 0) throw std::invalid_argument("validate_epoch: batch size must be positive");
    Validation v;
    v.levels.assign(levels.begin(), levels.end());
    for (int l : levels) {
        const auto info = codec::make_side_info(model.config(), l, snr_db);
        channel::NoiseStream noise(mix_seed(noise_seed, static_cast<std::uint64_t>(l)));
        double psnr_sum = 0.0, se_sum = 0.0;
        std::size_t elements = 0;
        for (int first = 0; first < val.size(); first += batch_size) {
            const int n = std::min(batch_size, val.size() - first);
            const ImageBatch batch = val.range(first, n);
            const ImageBatch out = model.reconstruct(batch, info, &noise);
            for (double p : psnr_per_image(batch, out)) psnr_sum += p;
            se_sum += mse(batch.pixels, out.pixels) * static_cast<double>(batch.pixels.size());
            elements += batch.pixels.size();
        }
        v.psnr.push_back(psnr_sum / val.size());
        v.mse.push_back(se_sum / static_cast<double>(elements));
    }
    v.mean_mse = mean(v.mse);
    return v;
}

// ---------------------------------------------------------------------------

std::string TrainLog::to_json_line(const EpochRecord& r) {
    json j{{"epoch", r.epoch},
           {"lr", r.lr},
           {"train_loss", r.train_loss},
           {"train_mse", r.train_mse},
           {"batches", r.batches},
           {"skipped", r.skipped},
           {"weights", r.weights},
           {"next_weights", r.next_weights},
           {"levels", r.levels},
           {"val_psnr", r.val_psnr},
           {"val_mse", r.val_mse},
           {"gaps", r.gaps},
           {"metric", r.metric},
           {"improved", r.improved},
           {"histogram", r.histogram}};
    return j.dump();
}

EpochRecord TrainLog::from_json_line(const std::string& line) {
    const json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.train_mse = j.at("train_mse").get<double>();
    r.batches = j.at("batches").get<int>();
    r.skipped = j.at("skipped").get<int>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.next_weights = j.at("next_weights").get<std::vector<double>>();
    r.levels = j.at("levels").get<std::vector<int>>();
    r.val_psnr = j.at("val_psnr").get<std::vector<double>>();
    r.val_mse = j.at("val_mse").get<std::vector<double>>();
    r.gaps = j.at("gaps").get<std::vector<double>>();
    r.metric = j.at("metric").get<double>();
    r.improved = j.at("improved").get<bool>();
    r.histogram = j.at("histogram").get<std::vector<std::vector<int>>>();
    return r;
}

std::string TrainLog::to_jsonl() const {
    std::string out;
    for (const auto& r : records_) out += to_json_line(r) + "\n";
    return out;
}

TrainLog TrainLog::from_jsonl(const std::string& text) {
    TrainLog log;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        log.append(from_json_line(line));
    }
    return log;
}

TrainLog TrainLog::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open train log " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_jsonl(ss.str());
}

// ---------------------------------------------------------------------------

fs::path run_directory(const fs::path& out, const ExperimentConfig& cfg, const std::string& run_name) {
    fs::path dir = out / hash_hex(architecture_hash(cfg));
    if (!run_name.empty()) dir /= run_name;
    return dir;
}

TrainResult train(const ExperimentConfig& cfg, const ImageDataset& train_set, const ImageDataset& val_set,
                  const TrainOptions& options) {
    validate(cfg.grid, cfg.model, cfg.train);
    const auto& tc = cfg.train;
    const int L = cfg.grid.levels;
    if (train_set.size() == 0) throw std::invalid_argument("train: training set is empty");
    if (val_set.size() == 0) throw std::invalid_argument("train: validation set is empty");
    if (options.fixed_level && (*options.fixed_level < 1 || *options.fixed_level > L))
        throw std::out_of_range("train: fixed level outside the grid");
    if (train_set.channels() != cfg.model.channels || train_set.height() != cfg.model.height ||
        train_set.width() != cfg.model.width)
        throw std::invalid_argument("train: dataset image shape does not match the model config");

    const bool adaptive = !options.fixed_level.has_value();
    std::vector<double> bounds;
    if (adaptive && options.registry && options.registry->covers(cfg)) bounds = options.registry->bounds_for(cfg);
    if (adaptive && tc.dwa.enabled && bounds.empty()) {
        if (!options.registry) throw RegistryError("DWA training needs an upper-bound registry (or disable dwa)");
        options.registry->bounds_for(cfg);  // throws naming the missing level
    }

    TrainResult result;
    result.model = std::make_shared<codec::JsccModel>(cfg, tc.seeds.init);
    const codec::JsccModel& model = *result.model;
    nn::Adam optimizer(model.parameter_vars(), nn::AdamOptions{tc.lr, tc.adam.beta1, tc.adam.beta2, tc.adam.eps});
    nn::Rng sampling(tc.seeds.sampling);
    nn::Rng shuffle(tc.seeds.shuffle);
    channel::NoiseStream noise(tc.seeds.channel);
    const std::uint64_t val_seed = mix_seed(tc.seeds.channel, kValidationStream);

    std::vector<int> levels;
    if (adaptive) {
        for (int l = 1; l <= L; ++l) levels.push_back(l);
    } else {
        levels.push_back(*options.fixed_level);
    }
    const double snr_val = options.fixed_snr.value_or(tc.snr_val());
    const int patience = adaptive ? tc.patience_adaptive : tc.patience_fixed;

    const bool persist = !options.out_dir.empty();
    fs::path log_path;
    if (persist) {
        result.run_dir = run_directory(options.out_dir, cfg, options.run_name);
        fs::create_directories(result.run_dir);
        save_config(cfg, result.run_dir / "config.json");
        log_path = result.run_dir / "train_log.jsonl";
        write_text(log_path, "");
    }

    DwaState state = DwaState::initial(L);
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0, since_plateau = 0;
    std::vector<std::vector<float>> best_params;
    std::vector<int> order(static_cast<std::size_t>(train_set.size()));
    const int bins = snr_bins(tc);

    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = optimizer.lr();
        rec.weights = state.weights;
        rec.histogram.assign(static_cast<std::size_t>(L), std::vector<int>(static_cast<std::size_t>(bins), 0));

        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle);
        double loss_sum = 0.0, mse_sum = 0.0;
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), order.size() - first);
            const ImageBatch batch = train_set.batch(std::span<const int>(order).subspan(first, n));
            Condition cond = sample_condition(tc, cfg.grid, sampling);
            if (options.fixed_level) cond.l = *options.fixed_level;
            if (options.fixed_snr) cond.snr_db = *options.fixed_snr;
            const double w = adaptive ? state.weights[static_cast<std::size_t>(cond.l - 1)] : 1.0;
            const int bin = std::clamp(static_cast<int>(std::floor(cond.snr_db - tc.snr_min)), 0, bins - 1);
            ++rec.histogram[static_cast<std::size_t>(cond.l - 1)][static_cast<std::size_t>(bin)];

            StepResult step;
            try {
                step = train_step(model, optimizer, batch, cond, w, noise);
            } catch (const NonFiniteLossError& e) {
                json snap = json::parse(e.snapshot());
                snap["epoch"] = epoch;
                snap["batch"] = rec.batches;
                if (persist) write_text(result.run_dir / "diagnostic.json", snap.dump(2) + "\n");
                throw NonFiniteLossError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(rec.batches) + ")",
                                         snap.dump(2));
            }
            loss_sum += step.loss;
            mse_sum += step.mse;
            if (!step.applied) ++rec.skipped;
            ++rec.batches;
        }
        rec.train_loss = loss_sum / rec.batches;
        rec.train_mse = mse_sum / rec.batches;

        const Validation v = validate_epoch(model, val_set, snr_val, val_seed, tc.batch_size, levels);
        rec.levels = v.levels;
        rec.val_psnr = v.psnr;
        rec.val_mse = v.mse;
        rec.metric = v.mean_mse;
        if (adaptive) {
            if (!bounds.empty()) {
                state = update_weights(state, v.psnr, bounds, tc.dwa);
                rec.gaps = state.gaps;
            } else {
                state.psnr = v.psnr;
                state.epoch = epoch;
            }
        }
        rec.next_weights = state.weights;

        rec.improved = rec.metric < best;
        if (rec.improved) {
            best = rec.metric;
            result.best_epoch = epoch;
            result.best_metric = best;
            result.best_psnr = v.psnr;
            best_params = snapshot_parameters(model);
            since_best = 0;
            since_plateau = 0;
            if (persist) {
                save_checkpoint(result.run_dir / "best.ckpt", model, {epoch, best, options.run_name});
                write_text(result.run_dir / "BEST", std::to_string(epoch) + "\n");
            }
        } else {
            ++since_best;
            ++since_plateau;
        }
        if (since_plateau >= tc.lr_patience) {
            optimizer.set_lr(optimizer.lr() * tc.lr_decay);
            since_plateau = 0;
        }

        if (persist) {
            std::ofstream(log_path, std::ios::app) << TrainLog::to_json_line(rec) << '\n';
            save_checkpoint(result.run_dir / "last.ckpt", model, {epoch, rec.metric, options.run_name});
            if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0)
                save_checkpoint(result.run_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), model,
                                {epoch, rec.metric, options.run_name});
        }
        if (options.on_epoch) options.on_epoch(rec);
        result.log.append(std::move(rec));

        if (since_best >= patience) {
            result.early_stopped = true;
            break;
        }
    }

    result.final_state = state;
    if (!best_params.empty()) restore_parameters(model, best_params);
    return result;
}

UpperBoundRegistry train_upper_bounds(const ExperimentConfig& cfg, const ImageDataset& train_set,
                                      const ImageDataset& val_set, const TrainOptions& options,
                                      const UpperBoundRegistry* existing) {
    UpperBoundRegistry registry = existing ? *existing : UpperBoundRegistry{};
    ExperimentConfig fixed = cfg;
    fixed.train.dwa.enabled = false;
    const double snr_val = cfg.train.snr_val();
    for (int l = 1; l <= cfg.grid.levels; ++l) {
        TrainOptions o = options;
        o.fixed_level = l;
        o.fixed_snr = snr_val;
        o.registry = nullptr;
        o.run_name = (options.run_name.empty() ? "" : options.run_name + "_") + "bound_l" + std::to_string(l);
        const TrainResult r = train(fixed, train_set, val_set, o);
        RegistryEntry e;
        e.rho = cfg.grid.rho(l);
        e.snr_val = snr_val;
        e.config_hash = bound_hash(cfg);
        e.psnr = r.best_psnr.empty() ? 0.0 : r.best_psnr.front();
        e.provenance = Provenance::trained;
        e.source = r.run_dir.empty() ? "in-memory" : (r.run_dir / "best.ckpt").string();
        registry.set(e);
    }
    if (!options.out_dir.empty()) registry.save(run_directory(options.out_dir, cfg, "") / "registry.json");
    return registry;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace jscc
