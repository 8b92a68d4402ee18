// Command-line front end: enhancement, prior inspection, staged training and
// evaluation over LOL-style paired directories.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpga/checkpoint.hpp"
#include "cpga/data.hpp"
#include "cpga/metrics.hpp"
#include "cpga/model.hpp"
#include "cpga/priors.hpp"
#include "cpga/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int resolve_threads(int flag_value) {
    if (flag_value > 0) {
        return flag_value;
    }
    if (const char* env = std::getenv("CPGA_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    return 0; // keep default (logical cores)
}

cpga::Tensor brighten(const cpga::Tensor& t, float gain) {
    cpga::Tensor out = t.clone();
    for (float& v : out.vec()) {
        v = std::min(1.0f, std::max(0.0f, v * gain));
    }
    return out;
}

cpga::Tensor abs_values(const cpga::Tensor& t) {
    cpga::Tensor out = t.clone();
    for (float& v : out.vec()) {
        v = std::fabs(v);
    }
    return out;
}

void dump_components(const cpga::model::EnhancedOutput& out, const fs::path& dir) {
    fs::create_directories(dir);
    cpga::data::save_image(out.local, dir / "r.png");
    cpga::data::save_image(out.gamma_corrected, dir / "r_gamma.png");
    // Transmission and airlight are dim by nature; brighten 40% for viewing.
    cpga::data::save_image(brighten(out.transmission, 1.4f), dir / "t.png");
    cpga::data::save_image(brighten(out.airlight, 1.4f), dir / "a_tilde.png");
    // The intersection can be negative; visualize its magnitude.
    cpga::data::save_image(abs_values(out.intersection), dir / "intersection.png");
    std::ofstream gamma_file(dir / "gamma.txt");
    gamma_file << out.gamma_value() << "\n";
}

cpga::train::TrainConfig parse_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw cpga::IoError("cannot open config file " + path.string());
    }
    json j = json::parse(in);
    cpga::train::TrainConfig cfg;
    if (j.contains("stage")) cfg.stage = cpga::train::stage_from_string(j.at("stage"));
    cpga::train::apply_stage_defaults(cfg);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.data_root = j.value("data", cfg.data_root);
    cfg.eval_root = j.value("eval_data", cfg.eval_root);
    cfg.checkpoint_in = j.value("checkpoint_in", cfg.checkpoint_in);
    cfg.teacher_checkpoint = j.value("teacher", cfg.teacher_checkpoint);
    cfg.checkpoint_out = j.value("checkpoint_out", cfg.checkpoint_out);
    cfg.crop = j.value("crop", cfg.crop);
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        cfg.weights.l1 = w.value("l1", cfg.weights.l1);
        cfg.weights.perceptual = w.value("perceptual", cfg.weights.perceptual);
        cfg.weights.kd = w.value("kd", cfg.weights.kd);
    }
    if (j.contains("model")) {
        cfg.model = cpga::train::config_from_json(j.at("model"));
    }
    return cfg;
}

int cmd_enhance(const std::string& input, const std::string& output,
                const std::string& checkpoint, bool dgf, const std::string& dump_dir) {
    cpga::train::Checkpoint ckpt = cpga::train::load_checkpoint(checkpoint);
    if (dgf) {
        ckpt.config.use_dgf = true;
    }
    const cpga::model::CpgaNet net = cpga::train::restore(ckpt);
    const cpga::Tensor img = cpga::data::load_image(input);
    const cpga::model::EnhancedOutput out = ckpt.config.use_dgf
                                                ? cpga::model::forward_dgf(net, img)
                                                : cpga::model::forward(net, img);
    cpga::data::save_image(out.output, output);
    if (!dump_dir.empty()) {
        dump_components(out, dump_dir);
    }
    std::cout << "enhanced " << input << " -> " << output << " (gamma=" << out.gamma_value()
              << ")\n";
    return 0;
}

int cmd_priors(const std::string& input, const std::string& output_dir, int patch_radius) {
    const cpga::Tensor img = cpga::data::load_image(input);
    fs::create_directories(output_dir);
    const fs::path dir(output_dir);
    if (patch_radius > 0) {
        cpga::priors::PatchSpec spec{patch_radius};
        cpga::data::save_image(cpga::priors::dark_channel_patch(img, spec), dir / "dark.png");
        cpga::data::save_image(cpga::priors::bright_channel_patch(img, spec), dir / "bright.png");
    } else {
        cpga::data::save_image(cpga::priors::dark_channel(img), dir / "dark.png");
        cpga::data::save_image(cpga::priors::bright_channel(img), dir / "bright.png");
    }
    cpga::data::save_image(cpga::priors::luminance_y(img), dir / "y.png");
    std::cout << "wrote dark.png, bright.png, y.png to " << output_dir << "\n";
    return 0;
}

int cmd_train(cpga::train::TrainConfig cfg) {
    using namespace cpga::train;
    TrainResult result;
    switch (cfg.stage) {
    case Stage::SelfSup:
        result = selfsup_pretrain(cfg);
        break;
    case Stage::Supervised: {
        std::optional<Checkpoint> init;
        if (!cfg.checkpoint_in.empty()) {
            init = load_checkpoint(cfg.checkpoint_in);
        }
        result = train_supervised(cfg, init.has_value() ? &*init : nullptr);
        break;
    }
    case Stage::KdFinetune: {
        if (cfg.teacher_checkpoint.empty() || cfg.checkpoint_in.empty()) {
            std::cerr << "kd stage requires --teacher and --resume (student)\n";
            return 1;
        }
        const Checkpoint teacher = load_checkpoint(cfg.teacher_checkpoint);
        const Checkpoint student = load_checkpoint(cfg.checkpoint_in);
        result = kd_finetune(cfg, teacher, student);
        break;
    }
    case Stage::DgfFinetune: {
        if (cfg.checkpoint_in.empty()) {
            std::cerr << "dgf stage requires --resume (initial student)\n";
            return 1;
        }
        result = dgf_finetune(cfg, load_checkpoint(cfg.checkpoint_in));
        break;
    }
    }
    if (cfg.checkpoint_out.empty()) {
        cfg.checkpoint_out = std::string("cpga_") + to_string(cfg.stage) + ".ckpt";
    }
    save_checkpoint(result.checkpoint, cfg.checkpoint_out);
    std::cout << "saved checkpoint to " << cfg.checkpoint_out
              << (result.aborted ? " (aborted early; last good weights)" : "") << "\n";
    return result.aborted ? 2 : 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_root,
             const std::string& report_path) {
    const cpga::train::Checkpoint ckpt = cpga::train::load_checkpoint(checkpoint);
    const cpga::data::DatasetIndex index = cpga::data::scan_dataset(data_root, {}, "test");
    const cpga::train::EvalReport report = cpga::train::evaluate(ckpt, index);
    std::cout << report.to_text();
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        out << report.to_json().dump(2) << "\n";
        std::cout << "report written to " << report_path << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CPGA-Net low-light image enhancement"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (default: logical cores)");

    // enhance
    auto* enhance = app.add_subcommand("enhance", "enhance a single image");
    std::string in_path, out_path, ckpt_path, dump_dir;
    bool dgf = false;
    enhance->add_option("--input", in_path, "input PNG")->required();
    enhance->add_option("--output", out_path, "output PNG")->required();
    enhance->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    enhance->add_flag("--dgf", dgf, "run the reduced-resolution guided-filter path");
    enhance->add_option("--dump-components", dump_dir,
                        "directory for intermediate maps (r, r_gamma, t, a_tilde, intersection, "
                        "gamma.txt)");

    // priors
    auto* priors_cmd = app.add_subcommand("priors", "dump dark/bright/Y planes");
    std::string priors_in, priors_dir;
    int patch_radius = 0;
    priors_cmd->add_option("--input", priors_in, "input PNG")->required();
    priors_cmd->add_option("--output-dir", priors_dir, "output directory")->required();
    priors_cmd->add_option("--patch-radius", patch_radius, "window radius (0 = pixel-wise)");

    // train
    auto* train_cmd = app.add_subcommand("train", "run one training stage");
    std::string stage_str = "supervised", config_path, data_dir, resume, teacher, train_out;
    int epochs = -1, batch = -1, crop = -1;
    double lr = -1.0;
    long long seed = -1;
    bool no_perceptual = false;
    std::string eval_data_dir;
    train_cmd->add_option("--stage", stage_str, "selfsup|supervised|kd|dgf");
    train_cmd->add_option("--config", config_path, "JSON config file");
    train_cmd->add_option("--data", data_dir, "dataset root (low/ + high/)");
    train_cmd->add_option("--eval-data", eval_data_dir, "held-out root for best-checkpoint pick");
    train_cmd->add_option("--resume", resume, "initial checkpoint / student");
    train_cmd->add_option("--teacher", teacher, "teacher checkpoint (kd stage)");
    train_cmd->add_option("--out", train_out, "output checkpoint path");
    train_cmd->add_option("--epochs", epochs, "override epoch count");
    train_cmd->add_option("--lr", lr, "override learning rate");
    train_cmd->add_option("--batch", batch, "override batch size");
    train_cmd->add_option("--crop", crop, "training crop size (0 = full images)");
    train_cmd->add_option("--seed", seed, "master seed");
    train_cmd->add_flag("--no-perceptual", no_perceptual, "train with the L1 term only");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a paired set");
    std::string eval_ckpt, eval_data, report_path;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--data", eval_data, "dataset root")->required();
    eval_cmd->add_option("--report", report_path, "write a JSON report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    const int n = resolve_threads(threads);
    if (n > 0) {
        cpga::set_max_threads(n);
    }

    try {
        if (enhance->parsed()) {
            return cmd_enhance(in_path, out_path, ckpt_path, dgf, dump_dir);
        }
        if (priors_cmd->parsed()) {
            return cmd_priors(priors_in, priors_dir, patch_radius);
        }
        if (train_cmd->parsed()) {
            cpga::train::TrainConfig cfg;
            if (!config_path.empty()) {
                cfg = parse_train_config(config_path);
                if (train_cmd->count("--stage") > 0) {
                    cfg.stage = cpga::train::stage_from_string(stage_str);
                }
            } else {
                cfg.stage = cpga::train::stage_from_string(stage_str);
                cpga::train::apply_stage_defaults(cfg);
            }
            if (!data_dir.empty()) cfg.data_root = data_dir;
            if (!eval_data_dir.empty()) cfg.eval_root = eval_data_dir;
            if (!resume.empty()) cfg.checkpoint_in = resume;
            if (!teacher.empty()) cfg.teacher_checkpoint = teacher;
            if (!train_out.empty()) cfg.checkpoint_out = train_out;
            if (epochs >= 0) cfg.epochs = epochs;
            if (lr > 0) cfg.lr = static_cast<float>(lr);
            if (batch > 0) cfg.batch = batch;
            if (crop >= 0) cfg.crop = crop;
            if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
            if (no_perceptual) cfg.weights.perceptual = 0.0f;
            return cmd_train(cfg);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_ckpt, eval_data, report_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
