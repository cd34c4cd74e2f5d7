#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "mmnet/config_file.hpp"
#include "mmnet/error.hpp"
#include "mmnet/evalkit.hpp"
#include "mmnet/tracker.hpp"
#include "mmnet/trainer.hpp"
#include "mmnet/verify.hpp"

#ifndef MMNET_VERSION
#define MMNET_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using namespace mmnet;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3, kNumeric = 4, kCheckpoint = 5 };

std::string g_argv;

void write_manifest(const fs::path& file, const std::string& command, std::uint64_t seed, const std::string& config)
{
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw IoError("cannot write manifest " + file.string());
    out << "version=" << MMNET_VERSION << "\n"
        << "command=" << command << "\n"
        << "argv=" << g_argv << "\n"
        << "seed=" << seed << "\n\n"
        << config;
    if (!out) throw IoError("write failed: " + file.string());
}

fs::path sibling(const fs::path& file, const std::string& suffix)
{
    fs::path p = file;
    p += suffix;
    return p;
}

// A directory is either one sequence or a collection of sequence directories.
std::vector<SequenceRecord> load_dataset(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    if (fs::exists(dir / "groundtruth.txt")) return {load_sequence(dir)};
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    if (subdirs.empty()) throw IoError("no sequences under " + dir.string());
    std::vector<SequenceRecord> out;
    for (const auto& d : subdirs) out.push_back(load_sequence(d));
    return out;
}

RunConfig base_config(const std::string& file)
{
    return file.empty() ? RunConfig{} : load_config(file);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out;
    int frames = 100;
    int size = 256;
    int distractors = 0;
    std::uint64_t seed = 1;
    double noise = 4;
    double target_size = 24;
    int class_id = 0;
    std::string domain = "tir";
    std::string name;
};

int cmd_synth(const SynthArgs& a)
{
    SynthSpec spec;
    spec.frames = a.frames;
    spec.size = a.size;
    spec.n_distractors = a.distractors;
    spec.noise_std = a.noise;
    spec.target_size = a.target_size;
    spec.class_id = a.class_id;
    spec.domain = parse_domain(a.domain);
    spec.name = a.name.empty() ? fs::path(a.out).filename().string() : a.name;
    if (spec.name.empty()) spec.name = "synth";
    const auto seq = synth_sequence(spec, a.seed);
    save_sequence(seq, a.out);
    std::ostringstream echo;
    echo << "[synth]\nframes = " << a.frames << "\nsize = " << a.size << "\ndistractors = " << a.distractors
         << "\nnoise = " << format_double(a.noise) << "\ntarget_size = " << format_double(a.target_size)
         << "\nclass_id = " << a.class_id << "\ndomain = " << a.domain << "\nname = " << spec.name << "\n";
    write_manifest(fs::path(a.out) / "manifest.txt", "synth", a.seed, echo.str());
    std::cout << "wrote " << seq.frames.size() << " frames to " << a.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::string strategy;
    std::string data_gray;
    std::string data_tir;
    std::string out;
    std::optional<int> epochs;
    std::optional<int> pairs_per_epoch;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a)
{
    RunConfig rc = base_config(a.config);
    if (!a.strategy.empty()) rc.train.strategy = parse_strategy(a.strategy);
    if (a.epochs) rc.train.epochs = *a.epochs;
    if (a.pairs_per_epoch) rc.train.pairs_per_epoch = *a.pairs_per_epoch;
    if (a.seed) rc.train.seed = *a.seed;
    rc.validate();

    bool need_gray = false, need_tir = false;
    for (const auto& s : plan_stages(rc.train)) {
        need_gray = need_gray || s.data != DataSource::tir;
        need_tir = need_tir || s.data != DataSource::grayscale;
    }
    const std::string strategy = to_string(rc.train.strategy);
    if (need_gray && a.data_gray.empty()) throw ConfigError("strategy " + strategy + " requires --data-gray");
    if (need_tir && a.data_tir.empty()) throw ConfigError("strategy " + strategy + " requires --data-tir");
    if (!need_tir && !a.data_tir.empty())
        std::cerr << "warning: strategy " << strategy << " does not use --data-tir; ignoring " << a.data_tir << "\n";
    if (!need_gray && !a.data_gray.empty())
        std::cerr << "warning: strategy " << strategy << " does not use --data-gray; ignoring " << a.data_gray << "\n";

    TrainData data;
    if (need_gray) data.grayscale = load_dataset(a.data_gray);
    if (need_tir) data.tir = load_dataset(a.data_tir);

    const fs::path ckpt = a.out;
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    const std::string echo = to_ini(rc);
    write_manifest(sibling(ckpt, ".manifest.txt"), "train", rc.train.seed, echo);

    const fs::path loss_path = sibling(ckpt, ".loss.csv");
    std::ofstream loss(loss_path);
    if (!loss) throw IoError("cannot write " + loss_path.string());
    loss << kLossLogHeader << "\n";

    TrainHooks hooks;
    hooks.loss_log = &loss;
    hooks.checkpoint_path = ckpt;
    hooks.config_echo = echo;
    const int batches = rc.train.pairs_per_epoch / rc.train.batch;
    if (!a.quiet) {
        hooks.on_batch = [batches](const BatchRecord& r) {
            if (r.batch + 1 == batches)
                std::printf("epoch %d  loss %.4f (dis %.4f cls %.4f fin %.4f)  lr %.3g\n", r.epoch, r.total, r.l_dis,
                            r.l_cls, r.l_fin, r.lr);
        };
    }
    const auto result = train(rc.train, rc.model, rc.sampler, data, hooks);
    save_checkpoint(result.checkpoint, ckpt);
    std::cout << "checkpoint " << ckpt.string() << " after " << result.checkpoint.epoch << " epochs\n";
    return kOk;
}

// ---------------------------------------------------------------- track

struct TrackArgs {
    std::string model;
    std::string sequence;
    std::string out;
    std::string config;
    std::string template_mode;
    std::optional<double> beta;
};

int cmd_track(const TrackArgs& a)
{
    RunConfig rc = base_config(a.config);
    if (!a.template_mode.empty()) rc.tracker.template_mode = parse_template_mode(a.template_mode);
    if (a.beta) rc.tracker.branch_mix = *a.beta;
    rc.tracker.validate();
    const auto ckpt = load_checkpoint(a.model);
    const auto model = checkpoint_model_config(ckpt);
    const auto seq = load_sequence(a.sequence);
    const auto run = track_sequence(ckpt.params, model, rc.tracker, seq);

    const fs::path out = a.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream csv(out);
    if (!csv) throw IoError("cannot write " + out.string());
    write_trajectory(csv, run.frames);
    if (!csv) throw IoError("write failed: " + out.string());
    write_manifest(sibling(out, ".manifest.txt"), "track", 0, to_ini(rc));
    std::printf("%zu frames, mean %.1f FPS\n", run.frames.size(), run.fps());
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> pred;
    std::vector<std::string> gt;
    std::string protocol;
    std::string out;
    std::string model;
    std::string config;
    std::optional<int> workers;
    bool no_plots = false;
};

std::vector<Box> boxes_of(const std::vector<TrackedFrame>& frames)
{
    std::vector<Box> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.box);
    return out;
}

// Runs job(i) for i in [0, n) on `workers` threads; rethrows the first error.
template <typename F>
void parallel_for(std::size_t n, int workers, F job)
{
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::max(1, std::min(workers, static_cast<int>(n)));
    for (int t = 1; t < count; ++t) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

int cmd_eval(const EvalArgs& a)
{
    RunConfig rc = base_config(a.config);
    if (!a.protocol.empty()) rc.eval.protocol = a.protocol;
    if (a.workers) rc.eval.workers = *a.workers;
    if (a.no_plots) rc.eval.plots = false;
    rc.eval.validate();
    const int workers = rc.eval.workers > 0 ? rc.eval.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    MetricReport report;
    report.protocol = rc.eval.protocol;
    if (rc.eval.protocol == "ptb") {
        if (!a.model.empty()) throw ConfigError("the ptb protocol reads trajectories; use --pred, not --model");
        if (a.pred.size() != a.gt.size())
            throw ConfigError("got " + std::to_string(a.pred.size()) + " --pred files for " + std::to_string(a.gt.size()) +
                              " --gt sequences");
        report.sequences.resize(a.gt.size());
        parallel_for(a.gt.size(), workers, [&](std::size_t i) {
            const auto seq = load_sequence(a.gt[i]);
            const auto pred = read_trajectory(a.pred[i]);
            if (pred.size() != seq.boxes.size())
                throw InputError(a.pred[i] + " has " + std::to_string(pred.size()) + " rows but " + a.gt[i] + " has " +
                                 std::to_string(seq.boxes.size()) + " frames");
            report.sequences[i] = evaluate_trajectory(seq.name, boxes_of(pred), seq.boxes);
        });
    } else if (rc.eval.protocol == "vot-lite") {
        if (!a.pred.empty()) throw ConfigError("vot-lite reruns the tracker: pass --model instead of --pred");
        if (a.model.empty()) throw ConfigError("vot-lite requires --model");
        const auto ckpt = load_checkpoint(a.model);
        const auto model = checkpoint_model_config(ckpt);
        const auto params = prune_classifier(ckpt.params);
        report.sequences.resize(a.gt.size());
        parallel_for(a.gt.size(), workers, [&](std::size_t i) {
            const auto seq = load_sequence(a.gt[i]);
            // Precision and success come from an uninterrupted run.
            const auto plain = track_sequence(params, model, rc.tracker, seq);
            auto m = evaluate_trajectory(seq.name, boxes_of(plain.frames), seq.boxes);
            std::optional<TrackerSession> session;
            TrackerRunner runner{
                [&](std::size_t f, const Box& b) { session.emplace(params, model, rc.tracker, seq.frames[f], b); },
                [&](std::size_t f) { return session->track(seq.frames[f]).box; }};
            const auto r = vot_lite(runner, seq.boxes, rc.eval.reinit_skip, rc.eval.burnin);
            m.accuracy = r.accuracy;
            m.robustness = r.robustness;
            m.eao_lite = r.eao_lite;
            report.sequences[i] = std::move(m);
        });
    } else {
        throw ConfigError("unknown protocol '" + rc.eval.protocol + "' (expected ptb or vot-lite)");
    }
    if (report.sequences.empty()) throw ConfigError("no sequences given (--gt)");

    write_report(report, a.out, rc.eval.plots);
    write_manifest(fs::path(a.out) / "manifest.txt", "eval", 0, to_ini(rc));
    const auto agg = report.aggregate();
    std::printf("%s over %zu sequences: pre20 %.4f  auc %.4f", report.protocol.c_str(), report.sequences.size(), agg.pre20,
                agg.auc);
    if (report.protocol == "vot-lite")
        std::printf("  accuracy %.4f  robustness %.2f  eao-lite %.4f", agg.accuracy, agg.robustness, agg.eao_lite);
    std::printf("\n");
    return kOk;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const std::vector<std::string>& suites, const std::string& out)
{
    Verifier v;
    v.on_check = [](const Check& c) { std::cout << format_check(c) << std::endl; };
    run_suites(suites, v);
    std::string joined;
    for (const auto& s : suites) joined += (joined.empty() ? "" : ",") + s;
    if (!out.empty()) write_manifest(fs::path(out) / "verify_manifest.txt", "verify --suite " + joined, 0, to_ini(RunConfig{}));

    std::cout << "\ncriterion  result\n";
    for (int c = 1; c <= 9; ++c) {
        bool seen = false, info = false;
        for (const auto& k : v.checks()) {
            if (k.criterion != c) continue;
            seen = true;
            info = info || k.informational;
        }
        if (!seen) continue;
        const char* verdict = v.criterion_passed(c) ? "PASS" : (info ? "INFO" : "FAIL");
        std::printf("%9d  %s\n", c, verdict);
    }
    const bool ok = v.all_passed();
    std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
    return ok ? kOk : kVerifyFailed;
}

int run(int argc, char** argv)
{
    for (int i = 0; i < argc; ++i) g_argv += (i ? " " : "") + std::string(argv[i]);

    CLI::App app{"Multi-task matching network for thermal-infrared tracking"};
    app.set_version_flag("--version", MMNET_VERSION);
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic sequence directory");
    synth->add_option("--out", sa.out, "output sequence directory")->required();
    synth->add_option("--frames", sa.frames, "frame count (>= 2)")->check(CLI::Range(2, 1000000));
    synth->add_option("--size", sa.size, "frame side in pixels")->check(CLI::Range(64, 8192));
    synth->add_option("--distractors", sa.distractors, "distractor count")->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", sa.seed, "random seed");
    synth->add_option("--noise", sa.noise, "Gaussian noise std (gray levels)")->check(CLI::NonNegativeNumber);
    synth->add_option("--target-size", sa.target_size, "target side in pixels")->check(CLI::PositiveNumber);
    synth->add_option("--class-id", sa.class_id, "class id written to meta.txt")->check(CLI::NonNegativeNumber);
    synth->add_option("--domain", sa.domain, "grayscale or tir")->check(CLI::IsMember({"grayscale", "tir"}));
    synth->add_option("--name", sa.name, "sequence name (default: directory name)");

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train", "train a model with a multi-domain strategy");
    trainc->add_option("--config", ta.config, "INI configuration file")->check(CLI::ExistingFile);
    trainc->add_option("--strategy", ta.strategy, "vid-only, tir-only, retrain, finetune or mix");
    trainc->add_option("--data-gray", ta.data_gray, "grayscale sequence directory (or directory of sequences)");
    trainc->add_option("--data-tir", ta.data_tir, "TIR sequence directory (or directory of sequences)");
    trainc->add_option("--out", ta.out, "checkpoint path")->required();
    trainc->add_option("--epochs", ta.epochs, "override every stage's epoch count");
    trainc->add_option("--pairs-per-epoch", ta.pairs_per_epoch, "training pairs per epoch");
    trainc->add_option("--seed", ta.seed, "random seed");
    trainc->add_flag("--quiet", ta.quiet, "no per-epoch progress");

    TrackArgs ka;
    auto* track = app.add_subcommand("track", "track one sequence from its first-frame box");
    track->add_option("--model", ka.model, "checkpoint")->required();
    track->add_option("--sequence", ka.sequence, "sequence directory")->required();
    track->add_option("--out", ka.out, "trajectory CSV")->required();
    track->add_option("--config", ka.config, "INI configuration file ([tracker] section)")->check(CLI::ExistingFile);
    track->add_option("--template-mode", ka.template_mode, "first, previous or ema");
    track->add_option("--beta", ka.beta, "weight of the discriminative response")->check(CLI::Range(0.0, 1.0));

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "score trajectories or rerun the tracker under resets");
    eval->add_option("--pred", ea.pred, "trajectory CSVs (ptb)");
    eval->add_option("--gt", ea.gt, "ground-truth sequence directories")->required();
    eval->add_option("--protocol", ea.protocol, "ptb or vot-lite");
    eval->add_option("--out", ea.out, "report directory")->required();
    eval->add_option("--model", ea.model, "checkpoint (vot-lite)");
    eval->add_option("--config", ea.config, "INI configuration file")->check(CLI::ExistingFile);
    eval->add_option("--workers", ea.workers, "parallel sequences (default: logical cores)")->check(CLI::PositiveNumber);
    eval->add_flag("--no-plots", ea.no_plots, "skip SVG plots");

    std::vector<std::string> suites{"all"};
    std::string verify_out;
    auto* verify = app.add_subcommand("verify", "run the acceptance suites");
    verify->add_option("--suite", suites, "grad, oracle, shape, overfit, track-synth, strategy, metrics, persistence, all")
        ->check(CLI::IsMember(suite_names()));
    verify->add_option("--out", verify_out, "directory for the run manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) return cmd_synth(sa);
        if (*trainc) return cmd_train(ta);
        if (*track) return cmd_track(ka);
        if (*eval) return cmd_eval(ea);
        if (*verify) return cmd_verify(suites, verify_out);
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return kIo;
    }
}
