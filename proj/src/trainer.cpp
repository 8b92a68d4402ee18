#include "cpga/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <sstream>

#include "cpga/metrics.hpp"
#include "cpga/rng.hpp"

namespace cpga::train {

using nlohmann::json;

const char* to_string(Stage s) {
    switch (s) {
    case Stage::SelfSup: return "selfsup";
    case Stage::Supervised: return "supervised";
    case Stage::KdFinetune: return "kd";
    case Stage::DgfFinetune: return "dgf";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "selfsup") return Stage::SelfSup;
    if (s == "supervised") return Stage::Supervised;
    if (s == "kd") return Stage::KdFinetune;
    if (s == "dgf") return Stage::DgfFinetune;
    throw ShapeError("unknown stage: " + s);
}

void apply_stage_defaults(TrainConfig& cfg) {
    switch (cfg.stage) {
    case Stage::SelfSup:
        cfg.epochs = 20;
        cfg.lr = 1e-4f;
        break;
    case Stage::Supervised:
        cfg.epochs = 50;
        cfg.lr = 1e-4f;
        cfg.batch = 8;
        break;
    case Stage::KdFinetune:
    case Stage::DgfFinetune:
        cfg.epochs = 30;
        cfg.lr = 1e-5f;
        break;
    }
}

namespace {

struct LoadedSet {
    std::vector<data::PairedSample> samples;
};

LoadedSet load_all(const std::string& root) {
    if (root.empty()) {
        throw IoError("trainer: no data root given");
    }
    const data::DatasetIndex index = data::scan_dataset(root);
    LoadedSet set;
    set.samples.reserve(index.size());
    for (const auto& e : index.entries) {
        set.samples.push_back(data::load_pair(e));
    }
    return set;
}

model::EnhancedOutput run_model(const model::CpgaNet& net, const Tensor& img) {
    return net.config().use_dgf ? model::forward_dgf(net, img) : model::forward(net, img);
}

struct EvalPoint {
    double psnr = std::numeric_limits<double>::quiet_NaN();
    double ssim = std::numeric_limits<double>::quiet_NaN();
};

EvalPoint eval_on(const model::CpgaNet& net, const LoadedSet& set) {
    EvalPoint p;
    if (set.samples.empty()) {
        return p;
    }
    double sum_psnr = 0.0, sum_ssim = 0.0;
    for (const auto& s : set.samples) {
        const model::EnhancedOutput out = run_model(net, s.low);
        sum_psnr += metrics::psnr(out.output, s.gt);
        sum_ssim += metrics::ssim(out.output, s.gt);
    }
    p.psnr = sum_psnr / static_cast<double>(set.samples.size());
    p.ssim = sum_ssim / static_cast<double>(set.samples.size());
    return p;
}

// One optimization pass over the whole dataset. `target_of` selects the
// training target (ground truth or the input itself); `extra_loss` adds the
// distillation term when a teacher is present.
struct StageContext {
    const TrainConfig& cfg;
    model::CpgaNet& net;
    const model::CpgaNet* teacher = nullptr;
    loss::ProxyFeatureExtractor psi;
    AdamState adam;
    bool target_is_input = false;

    StageContext(const TrainConfig& c, model::CpgaNet& n) : cfg(c), net(n) {}
};

double run_epoch(StageContext& ctx, const LoadedSet& train, int epoch) {
    const TrainConfig& cfg = ctx.cfg;
    const uint64_t epoch_seed = Rng::derive(cfg.seed, 0x10000u + static_cast<uint64_t>(epoch));
    std::vector<int> order(train.samples.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = static_cast<int>(i);
    }
    Rng shuffle_rng(epoch_seed);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    long sample_count = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
        const size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(cfg.batch));
        const int batch_n = static_cast<int>(batch_end - cursor);
        ctx.net.zero_grads();
        for (size_t b = cursor; b < batch_end; ++b) {
            const data::PairedSample& base = train.samples[static_cast<size_t>(order[b])];
            data::PairedSample sample = base;
            const uint64_t sample_seed = Rng::derive(epoch_seed, 2 * b);
            if (cfg.crop > 0 && (cfg.crop < base.low.dim(1) || cfg.crop < base.low.dim(2))) {
                const int size = std::min({cfg.crop, base.low.dim(1), base.low.dim(2)});
                sample = data::random_patch_pair(sample, size, sample_seed);
            }
            sample = data::augment(sample, Rng::derive(epoch_seed, 2 * b + 1));
            const Tensor& target = ctx.target_is_input ? sample.low : sample.gt;

            Tape tape;
            {
                Tape::Scope scope(tape);
                const model::EnhancedOutput out = run_model(ctx.net, sample.low);
                Tensor loss_t;
                if (ctx.teacher != nullptr) {
                    // The teacher is frozen, so none of its ops are recorded.
                    const model::EnhancedOutput tout = model::forward(*ctx.teacher, sample.low);
                    loss_t = loss::total_loss_dgf(out, target, tout, cfg.weights, ctx.psi);
                } else {
                    loss_t = loss::enhance_loss(out.output, target, cfg.weights, ctx.psi);
                }
                epoch_loss += static_cast<double>(loss_t.item());
                ++sample_count;
                const Tensor scaled = mul_scalar(loss_t, 1.0f / static_cast<float>(batch_n));
                tape.backward(scaled);
            }
        }
        std::vector<Tensor> params = ctx.net.params();
        adam_step(params, ctx.adam, cfg.lr);
        cursor = batch_end;
    }
    return epoch_loss / static_cast<double>(std::max(1L, sample_count));
}

TrainResult run_stage(StageContext& ctx, json provenance_base) {
    const TrainConfig& cfg = ctx.cfg;
    const LoadedSet train = load_all(cfg.data_root);
    LoadedSet held_out;
    if (!cfg.eval_root.empty()) {
        held_out = load_all(cfg.eval_root);
    }

    TrainResult result;
    Checkpoint last_good = snapshot(ctx.net, provenance_base);
    Checkpoint best = last_good;
    double best_psnr = -std::numeric_limits<double>::infinity();
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    int completed = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss = 0.0;
        try {
            loss = run_epoch(ctx, train, epoch);
        } catch (const NumericError& e) {
            std::cerr << "[train] aborted in epoch " << epoch + 1 << ": " << e.what() << "\n";
            result.aborted = true;
            break;
        }
        final_loss = loss;
        completed = epoch + 1;

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = loss;
        if (!held_out.samples.empty()) {
            const EvalPoint p = eval_on(ctx.net, held_out);
            stats.eval_psnr = p.psnr;
            stats.eval_ssim = p.ssim;
            if (p.psnr > best_psnr) {
                best_psnr = p.psnr;
                best = snapshot(ctx.net, provenance_base);
            }
        }
        result.history.push_back(stats);
        last_good = snapshot(ctx.net, provenance_base);
        if (!cfg.quiet) {
            std::ostringstream line;
            line << "[train] stage=" << to_string(cfg.stage) << " epoch=" << stats.epoch << "/"
                 << cfg.epochs << " loss=" << stats.train_loss;
            if (!held_out.samples.empty()) {
                line << " eval_psnr=" << stats.eval_psnr << " eval_ssim=" << stats.eval_ssim;
            }
            std::cout << line.str() << "\n";
        }
    }

    json record{{"stage", to_string(cfg.stage)},
                {"epochs", cfg.epochs},
                {"completed_epochs", completed},
                {"lr", cfg.lr},
                {"batch", cfg.batch},
                {"seed", cfg.seed},
                {"data_root", cfg.data_root},
                {"aborted", result.aborted}};
    if (std::isfinite(final_loss)) {
        record["final_train_loss"] = final_loss;
    }
    if (std::isfinite(best_psnr)) {
        record["best_eval_psnr"] = best_psnr;
    }

    Checkpoint chosen =
        result.aborted ? last_good
                       : (!held_out.samples.empty() ? best : snapshot(ctx.net, provenance_base));
    chosen.provenance.push_back(record);
    result.checkpoint = std::move(chosen);
    return result;
}

} // namespace

TrainResult selfsup_pretrain(const TrainConfig& cfg) {
    model::CpgaNet net(cfg.model, cfg.seed);
    if (!cfg.checkpoint_in.empty()) {
        apply_weights(load_checkpoint(cfg.checkpoint_in), net);
    }
    StageContext ctx(cfg, net);
    ctx.target_is_input = true;
    return run_stage(ctx, json::array());
}

TrainResult train_supervised(const TrainConfig& cfg, const Checkpoint* init) {
    model::CpgaNet net(cfg.model, cfg.seed);
    json provenance = json::array();
    if (init != nullptr) {
        apply_weights(*init, net);
        provenance = init->provenance;
    }
    StageContext ctx(cfg, net);
    return run_stage(ctx, std::move(provenance));
}

TrainResult kd_finetune(const TrainConfig& cfg, const Checkpoint& teacher,
                        const Checkpoint& student) {
    if (teacher.config.base_channels <= student.config.base_channels) {
        std::cerr << "[train] warning: teacher (" << teacher.config.base_channels
                  << " ch) is not wider than the student (" << student.config.base_channels
                  << " ch); proceeding\n";
    }
    model::CpgaNet teacher_net = restore(teacher);
    teacher_net.set_trainable(false);

    model::CpgaNet net(student.config, cfg.seed);
    apply_weights(student, net);

    StageContext ctx(cfg, net);
    ctx.teacher = &teacher_net;
    return run_stage(ctx, student.provenance);
}

TrainResult dgf_finetune(const TrainConfig& cfg, const Checkpoint& init) {
    model::CpgaConfig dgf_cfg = init.config;
    dgf_cfg.use_dgf = true;
    if (cfg.model.use_dgf) {
        dgf_cfg.dgf_downsample = cfg.model.dgf_downsample;
        dgf_cfg.dgf_filter = cfg.model.dgf_filter;
    }
    model::CpgaNet net(dgf_cfg, cfg.seed);
    apply_weights(init, net);

    StageContext ctx(cfg, net);
    return run_stage(ctx, init.provenance);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

json EvalReport::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows) {
        json row{{"id", r.id}, {"ssim", r.ssim}, {"seconds", r.seconds}};
        if (std::isinf(r.psnr)) {
            row["psnr"] = "inf";
        } else {
            row["psnr"] = r.psnr;
        }
        rows_json.push_back(row);
    }
    json out{{"rows", rows_json},
             {"mean_ssim", mean_ssim},
             {"mean_seconds", mean_seconds},
             {"params", params},
             {"flops_600x400", flops_600x400},
             {"failed", failed}};
    if (std::isinf(mean_psnr)) {
        out["mean_psnr"] = "inf";
    } else {
        out["mean_psnr"] = mean_psnr;
    }
    return out;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    char buf[160];
    os << "id                     psnr[dB]    ssim   time[s]\n";
    auto fmt_psnr = [](double v) {
        if (std::isinf(v)) {
            return std::string("     inf");
        }
        char b[32];
        std::snprintf(b, sizeof(b), "%8.2f", v);
        return std::string(b);
    };
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-20s %s  %6.3f  %8.4f\n", r.id.c_str(),
                      fmt_psnr(r.psnr).c_str(), r.ssim, r.seconds);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-20s %s  %6.3f  %8.4f\n", "mean",
                  fmt_psnr(mean_psnr).c_str(), mean_ssim, mean_seconds);
    os << buf;
    os << "params: " << params << "  flops@600x400: " << flops_600x400 << "\n";
    if (!failed.empty()) {
        os << "failed:";
        for (const auto& f : failed) {
            os << " " << f;
        }
        os << "\n";
    }
    return os.str();
}

EvalReport evaluate(const Checkpoint& ckpt, const data::DatasetIndex& dataset) {
    const model::CpgaNet net = restore(ckpt);
    EvalReport report;
    report.params = model::param_count(net);
    report.flops_600x400 = model::flops_estimate(net, 400, 600).total();

    double sum_psnr = 0.0, sum_ssim = 0.0, sum_sec = 0.0;
    for (const auto& entry : dataset.entries) {
        data::PairedSample sample;
        try {
            sample = data::load_pair(entry);
        } catch (const std::exception& e) {
            std::cerr << "[eval] skipping '" << entry.id << "': " << e.what() << "\n";
            report.failed.push_back(entry.id);
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        const model::EnhancedOutput out = run_model(net, sample.low);
        const auto stop = std::chrono::steady_clock::now();

        EvalRow row;
        row.id = entry.id;
        row.psnr = metrics::psnr(out.output, sample.gt);
        row.ssim = metrics::ssim(out.output, sample.gt);
        row.seconds = std::chrono::duration<double>(stop - start).count();
        sum_psnr += row.psnr;
        sum_ssim += row.ssim;
        sum_sec += row.seconds;
        report.rows.push_back(row);
    }
    const double n = static_cast<double>(std::max<size_t>(1, report.rows.size()));
    report.mean_psnr = sum_psnr / n;
    report.mean_ssim = sum_ssim / n;
    report.mean_seconds = sum_sec / n;
    return report;
}

} // namespace cpga::train
