#include "mmreg/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mmreg/augment.hpp"
#include "mmreg/error.hpp"
#include "mmreg/evalstats.hpp"
#include "mmreg/field.hpp"
#include "mmreg/image.hpp"
#include "mmreg/pipeline.hpp"
#include "mmreg/record.hpp"
#include "mmreg/synthdata.hpp"

namespace mmreg::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flag values found after CLI11 parsing; reported like parse errors.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
    const auto x = text.find('x');
    std::size_t w = 0, h = 0;
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        std::size_t used_w = 0, used_h = 0;
        w = std::stoul(text.substr(0, x), &used_w);
        h = std::stoul(text.substr(x + 1), &used_h);
        if (used_w != x || used_h != text.size() - x - 1) throw std::invalid_argument(text);
    } catch (const std::logic_error&) {
        throw UsageError("size must look like WIDTHxHEIGHT, got '" + text + "'");
    }
    if (w == 0 || h == 0) throw UsageError("size must be positive, got '" + text + "'");
    return {w, h};
}

ChannelWeights parse_weights(const std::string& text) {
    ChannelWeights w{};
    std::stringstream ss(text);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i == 3) throw UsageError("gray weights need exactly three values r,g,b");
        try {
            std::size_t used = 0;
            w[i] = std::stod(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::logic_error&) {
            throw UsageError("gray weights: not a number: '" + part + "'");
        }
        ++i;
    }
    if (i != 3) throw UsageError("gray weights need exactly three values r,g,b");
    return w;
}

/// Converts a ParameterError raised while interpreting flags into a usage error.
template <typename F>
auto flag_value(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
}

struct SynthArgs {
    std::size_t n = 0;
    std::string size = "128x96";
    std::string levels = "0.4:0.4:0.2";
    std::string artifact = "none";
    std::string out;
    std::uint64_t seed = 0;
};

struct AugmentArgs {
    std::string in;
    std::size_t per_pair = 0;
    std::string mode = "unsupervised";
    std::string levels = "0.4:0.4:0.2";
    std::string out;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string log;
    std::string resume;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

struct RegisterArgs {
    std::string model;
    bool direct = false;
    std::string config;
    std::string fixed;
    std::string moving;
    std::string out;
    std::string warped;
    std::string pairs;
    std::string out_dir;
    bool full_res = false;
    std::string gray_weights;
    std::string resize;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

struct EvaluateArgs {
    std::string pairs;
    std::string fields;
    std::size_t bins = 32;
    std::string binarize = "otsu";
    std::string out;
    std::string json;
};

struct ReportArgs {
    std::string in;
    std::string violin;
};

void run_synth(const SynthArgs& a, std::ostream& out) {
    BenchmarkOptions opts;
    std::tie(opts.width, opts.height) = parse_size(a.size);
    opts.levels = flag_value([&] { return LevelMix::parse(a.levels); });
    opts.artifact = flag_value([&] { return Artifact::parse(a.artifact); });
    const auto records = generate_benchmark_set(a.n, opts, a.seed);
    write_dataset(records, a.out);
    out << "wrote " << records.size() << " pairs to " << a.out << '\n';
}

void run_augment(const AugmentArgs& a, std::ostream& out) {
    const LevelMix mix = flag_value([&] { return LevelMix::parse(a.levels); });
    AugmentMode mode;
    if (a.mode == "unsupervised") {
        mode = AugmentMode::unsupervised;
    } else if (a.mode == "supervised") {
        mode = AugmentMode::supervised;
    } else {
        throw UsageError("--mode must be unsupervised or supervised");
    }
    if (a.per_pair == 0) throw UsageError("--per-pair must be at least 1");
    const auto source = read_dataset(a.in);
    const auto records = build_augmented_set(source, a.per_pair, mix, a.seed, mode);
    write_dataset(records, a.out);
    out << "wrote " << records.size() << " augmented pairs to " << a.out << '\n';
}

void run_train(const TrainArgs& a, std::ostream& out) {
    TrainConfig cfg = load_train_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.threads) cfg.threads = *a.threads;
    cfg.validate();
    const auto records = read_dataset(a.data);
    const DatasetSplit split = split_dataset(records, cfg);

    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) resume = load_checkpoint(a.resume);

    // Earlier rows are kept when resuming from a log written by a previous run.
    TrainLog log;
    if (resume && !a.log.empty() && fs::exists(a.log)) {
        log = read_train_log_csv(a.log);
        const std::uint64_t done = resume->adam ? resume->adam->step / cfg.steps_per_epoch : 0;
        std::erase_if(log.epochs, [&](const EpochRecord& r) { return r.epoch > done; });
    }
    const std::size_t prefix = log.epochs.size();

    const auto result =
        train(split.train, split.val, cfg, resume ? &*resume : nullptr,
              [&](const EpochRecord& r, const NetParams<float>& params, const AdamState<float>& adam) {
                  out << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss
                      << " val_dice " << r.val_dice_median << '\n';
                  save_checkpoint(params, &adam, a.out);
              });
    save_checkpoint(result.params, &result.adam, a.out);
    if (!a.log.empty()) {
        log.epochs.resize(prefix);
        log.epochs.insert(log.epochs.end(), result.log.epochs.begin(), result.log.epochs.end());
        write_train_log_csv(log, a.log);
    }
    out << "saved checkpoint to " << a.out << '\n';
}

struct Registrar {
    std::optional<NetParams<float>> model;
    TrainConfig direct_cfg;
    std::optional<std::pair<std::size_t, std::size_t>> resize;

    /// Working resolution for a pair of size (w, h).
    std::pair<std::size_t, std::size_t> working_size(std::size_t w, std::size_t h) const {
        if (resize) return *resize;
        if (model) {
            const std::size_t ww = w / 4 * 4, hh = h / 4 * 4;
            if (ww == 0 || hh == 0) throw ParameterError("images are smaller than 4x4; pass --resize");
            return {ww, hh};
        }
        return {w, h};
    }

    DisplacementField field(const GrayImage& fixed, const GrayImage& moving) const {
        if (model) return register_with_model(*model, fixed, moving);
        return register_direct(fixed, moving, direct_cfg).field;
    }
};

void run_register(const RegisterArgs& a, std::ostream& out) {
    if (a.direct == !a.model.empty()) throw UsageError("pass exactly one of --model or --direct");
    const bool batch = !a.pairs.empty();
    if (batch) {
        if (a.out_dir.empty()) throw UsageError("--pairs needs --out-dir");
        if (!a.fixed.empty() || !a.moving.empty()) throw UsageError("--pairs cannot be combined with --fixed/--moving");
    } else if (a.fixed.empty() || a.moving.empty() || a.out.empty()) {
        throw UsageError("single-pair mode needs --fixed, --moving and --out");
    }
    const ChannelWeights weights = a.gray_weights.empty() ? kLumaWeights : parse_weights(a.gray_weights);

    Registrar reg;
    if (!a.resize.empty()) reg.resize = parse_size(a.resize);
    if (a.direct) {
        if (!a.config.empty()) reg.direct_cfg = load_train_config(a.config);
        if (a.seed) reg.direct_cfg.seed = *a.seed;
        if (a.threads) reg.direct_cfg.threads = *a.threads;
    } else {
        reg.model = load_checkpoint(a.model).params;
    }

    auto register_images = [&](const GrayImage& fixed, GrayImage moving, bool full_res) {
        if (!moving.same_shape(fixed)) moving = resize_bilinear(moving, fixed.width(), fixed.height());
        const auto [w, h] = reg.working_size(fixed.width(), fixed.height());
        const GrayImage f = resize_bilinear(fixed, w, h);
        const GrayImage m = resize_bilinear(moving, w, h);
        DisplacementField phi = reg.field(f, m);
        if (full_res && !phi.same_shape(fixed)) {
            phi = upsample_field(phi, fixed.width(), fixed.height());
            return std::pair{phi, warp_bilinear(moving, phi)};
        }
        return std::pair{phi, warp_bilinear(m, phi)};
    };

    if (batch) {
        const auto records = read_dataset(a.pairs);
        fs::create_directories(a.out_dir);
        for (const auto& r : records) {
            // Evaluation needs fields at record resolution, so batch mode always upsamples.
            const auto [phi, warped] = register_images(r.fixed, r.moving, true);
            save_ddf(phi, fs::path(a.out_dir) / (r.id + ".ddf"));
        }
        out << "registered " << records.size() << " pairs into " << a.out_dir << '\n';
        return;
    }
    const GrayImage fixed = load_gray(a.fixed, weights);
    const GrayImage moving = load_gray(a.moving, weights);
    const auto [phi, warped] = register_images(fixed, moving, a.full_res);
    save_ddf(phi, a.out);
    if (!a.warped.empty()) save_pgm(warped, a.warped);
    out << "field " << phi.width() << 'x' << phi.height() << " written to " << a.out << '\n';
}

void run_evaluate(const EvaluateArgs& a, std::ostream& out) {
    EvalConfig cfg;
    cfg.bins = a.bins;
    cfg.binarize = flag_value([&] { return BinarizeMethod::parse(a.binarize); });
    if (cfg.bins < 2) throw UsageError("--bins must be at least 2");
    const auto pairs = read_dataset(a.pairs);
    std::vector<DisplacementField> fields;
    fields.reserve(pairs.size());
    for (const auto& p : pairs) fields.push_back(load_ddf(fs::path(a.fields) / (p.id + ".ddf")));
    const EvalReport report = evaluate_pairs(pairs, fields, cfg);
    write_report_csv(report, a.out);
    if (!a.json.empty()) write_report_json(report, a.json);
    out << "dice median " << report.aggregate("dice_before").median << " -> " << report.aggregate("dice_after").median
        << " (p = " << report.test("dice").p << ")\n";
}

void run_report(const ReportArgs& a, std::ostream& out) {
    const EvalReport report = read_report_json(a.in);
    write_violin_csv(report, a.violin);
    out << "wrote " << report.rows.size() << " rows to " << a.violin << '\n';
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-modal deformable registration toolkit", "mmreg"};
    app.require_subcommand(1, 1);
    app.fallthrough(false);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark set");
    synth_cmd->add_option("--n", synth.n, "Number of pairs")->required()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--size", synth.size, "Image size WIDTHxHEIGHT")->capture_default_str();
    synth_cmd->add_option("--levels", synth.levels, "Deformation level mix low:medium:high")->capture_default_str();
    synth_cmd->add_option("--artifact", synth.artifact, "none | tears:C:W | holes:C:R")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Output dataset directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "Master seed")->capture_default_str();

    AugmentArgs augment;
    auto* augment_cmd = app.add_subcommand("augment", "Elastically augment a dataset");
    augment_cmd->add_option("--in", augment.in, "Input dataset directory")->required();
    augment_cmd->add_option("--per-pair", augment.per_pair, "Augmented records per input pair")->required();
    augment_cmd->add_option("--mode", augment.mode, "unsupervised | supervised")->capture_default_str();
    augment_cmd->add_option("--levels", augment.levels, "Deformation level mix low:medium:high")->capture_default_str();
    augment_cmd->add_option("--out", augment.out, "Output dataset directory")->required();
    augment_cmd->add_option("--seed", augment.seed, "Master seed")->capture_default_str();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train the registration network");
    train_cmd->add_option("--config", train_args.config, "Training config (JSON)")->required();
    train_cmd->add_option("--data", train_args.data, "Dataset directory")->required();
    train_cmd->add_option("--out", train_args.out, "Checkpoint path (rewritten after every epoch)")->required();
    train_cmd->add_option("--log", train_args.log, "Training log CSV");
    train_cmd->add_option("--resume", train_args.resume, "Checkpoint to resume from");
    train_cmd->add_option("--seed", train_args.seed, "Override the config seed");
    train_cmd->add_option("--threads", train_args.threads, "Worker threads")->check(CLI::PositiveNumber);

    RegisterArgs reg;
    auto* register_cmd = app.add_subcommand("register", "Register an image pair or a dataset");
    register_cmd->add_option("--model", reg.model, "Trained checkpoint");
    register_cmd->add_flag("--direct", reg.direct, "Optimize the field directly instead of using a model");
    register_cmd->add_option("--config", reg.config, "Config (JSON) for --direct");
    register_cmd->add_option("--fixed", reg.fixed, "Fixed image (PNG or PGM)");
    register_cmd->add_option("--moving", reg.moving, "Moving image (PNG or PGM)");
    register_cmd->add_option("--out", reg.out, "Output field (DDF1)");
    register_cmd->add_option("--warped", reg.warped, "Output warped moving image (PGM)");
    register_cmd->add_option("--pairs", reg.pairs, "Dataset directory for batch registration");
    register_cmd->add_option("--out-dir", reg.out_dir, "Field directory for batch registration (<id>.ddf)");
    register_cmd->add_flag("--full-res", reg.full_res, "Upsample the field to the original image size");
    register_cmd->add_option("--gray-weights", reg.gray_weights, "Channel weights r,g,b for color input");
    register_cmd->add_option("--resize", reg.resize, "Working resolution WIDTHxHEIGHT");
    register_cmd->add_option("--seed", reg.seed, "Seed for --direct");
    register_cmd->add_option("--threads", reg.threads, "Worker threads")->check(CLI::PositiveNumber);

    EvaluateArgs eval;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score fields against a dataset");
    evaluate_cmd->add_option("--pairs", eval.pairs, "Dataset directory")->required();
    evaluate_cmd->add_option("--fields", eval.fields, "Field directory (<id>.ddf)")->required();
    evaluate_cmd->add_option("--bins", eval.bins, "Histogram bins for MI")->capture_default_str();
    evaluate_cmd->add_option("--binarize", eval.binarize, "otsu | fixed:T")->capture_default_str();
    evaluate_cmd->add_option("--out", eval.out, "Report CSV")->required();
    evaluate_cmd->add_option("--json", eval.json, "Report JSON");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "Export report columns for plotting");
    report_cmd->add_option("--in", report.in, "Report JSON")->required();
    report_cmd->add_option("--violin", report.violin, "Violin-plot CSV")->required();

    std::vector<std::string> argv_storage{"mmreg"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_storage) argv.push_back(s.data());

    auto usage = [&](const std::string& message) {
        err << "error: " << message << "\n\n";
        const auto selected = app.get_subcommands();
        err << (selected.empty() ? app.help() : selected.front()->help());
        return kExitUsage;
    };

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        const auto selected = app.get_subcommands();
        out << (selected.empty() ? app.help() : selected.front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        return usage(e.what());
    }

    try {
        if (synth_cmd->parsed()) run_synth(synth, out);
        if (augment_cmd->parsed()) run_augment(augment, out);
        if (train_cmd->parsed()) run_train(train_args, out);
        if (register_cmd->parsed()) run_register(reg, out);
        if (evaluate_cmd->parsed()) run_evaluate(eval, out);
        if (report_cmd->parsed()) run_report(report, out);
    } catch (const UsageError& e) {
        return usage(e.what());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

} // namespace mmreg::cli
