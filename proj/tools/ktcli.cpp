// ktcli: runs the pipeline stage by stage or end to end.
//
//   ktcli synth --config configs/desk.yaml
//   ktcli featurize && ktcli train --only gbt-full
//   ktcli run-all --config configs/desk.yaml --workers 4

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <regex>
#include <set>

#include "kt/config/run_config.hpp"
#include "kt/eval/experiment.hpp"
#include "kt/features/feature_io.hpp"

namespace fs = std::filesystem;
using namespace kt;

namespace {

void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << std::endl; }

std::string str(const fs::path& p) { return p.string(); }

std::ofstream open_text(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + str(p));
    return out;
}

std::ifstream open_existing(const fs::path& p, const std::string& stage_to_run) {
    if (!fs::exists(p)) {
        throw MissingArtifactError("missing " + str(p) + "; run `ktcli " + stage_to_run + "` first");
    }
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + str(p));
    return in;
}

void write_json(const fs::path& p, const nlohmann::ordered_json& j) { open_text(p) << j.dump(2) << '\n'; }

nlohmann::ordered_json read_json(const fs::path& p, const std::string& stage_to_run) {
    auto in = open_existing(p, stage_to_run);
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(str(p) + ": " + e.what());
    }
}

std::string run_name_pattern(std::uint64_t seed) { return R"(^\d{8}-\d{6}-seed)" + std::to_string(seed) + R"((-\d+)?$)"; }

fs::path create_run_dir(const RunConfig& cfg) {
    fs::path dir = cfg.run_dir;
    if (dir.empty()) {
        char ts[32];
        const std::time_t now = std::time(nullptr);
        std::strftime(ts, sizeof ts, "%Y%m%d-%H%M%S", std::gmtime(&now));
        const auto base = fs::path(cfg.output_dir) / (std::string(ts) + "-seed" + std::to_string(cfg.seed));
        dir = base;
        for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
    }
    fs::create_directories(dir);
    return dir;
}

/// The run directory named by run_dir, else the newest one for this seed.
fs::path find_run_dir(const RunConfig& cfg) {
    if (!cfg.run_dir.empty()) {
        if (!fs::is_directory(cfg.run_dir)) {
            throw MissingArtifactError("run directory " + cfg.run_dir +
                                       " does not exist; run `ktcli synth` or `ktcli ingest` first");
        }
        return cfg.run_dir;
    }
    const std::regex pattern(run_name_pattern(cfg.seed));
    std::string best;
    if (fs::is_directory(cfg.output_dir)) {
        for (const auto& e : fs::directory_iterator(cfg.output_dir)) {
            const auto name = e.path().filename().string();
            if (e.is_directory() && std::regex_match(name, pattern) && name > best) best = name;
        }
    }
    if (best.empty()) {
        throw MissingArtifactError("no run directory for seed " + std::to_string(cfg.seed) + " under " +
                                   cfg.output_dir + "; run `ktcli synth` or `ktcli ingest` first");
    }
    return fs::path(cfg.output_dir) / best;
}

/// Merges one stage's wall time into timings.json. The only timing file besides model sidecars.
void record_timing(const fs::path& run, const std::string& stage, double seconds) {
    const auto path = run / "timings.json";
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        j = nlohmann::ordered_json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_object()) j = nlohmann::ordered_json::object();
    }
    j[stage] = seconds;
    write_json(path, j);
}

struct Loaded {
    Dataset ds;
    SplitLabel split;
    std::vector<Split> per_row;
};

Loaded load_data(const fs::path& run) {
    const auto dir = run / "data";
    for (const char* f : {"interactions.csv", "questions.csv", "students.csv", "split.csv"}) {
        if (!fs::exists(dir / f)) {
            throw MissingArtifactError("missing " + str(dir / f) + "; run `ktcli synth` or `ktcli ingest` first");
        }
    }
    Loaded out{load_dataset(str(dir)), read_split(str(dir / "split.csv")), {}};
    out.per_row = out.split.per_row(out.ds);
    return out;
}

FeatureTable load_features(const fs::path& run, const Dataset& ds) {
    const auto path = run / "features" / "features.ktft";
    if (!fs::exists(path)) throw MissingArtifactError("missing " + str(path) + "; run `ktcli featurize` first");
    auto t = read_ktft(str(path));
    try {
        attach_keys(t, ds);
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + "; features are stale, re-run `ktcli featurize`");
    }
    return t;
}

nlohmann::ordered_json dataset_summary(const Dataset& ds, const SplitLabel& split) {
    nlohmann::ordered_json j;
    j["interactions"] = ds.size();
    j["users"] = ds.user_ids().size();
    j["questions"] = ds.question_ids().size();
    j["skills"] = ds.skills().size();
    j["groups"] = ds.group_ids().size();
    j["quizzes"] = ds.quiz_ids().size();
    std::map<std::string, std::size_t> counts;
    for (const auto& x : ds.interactions()) ++counts[split_name(split.of(x.answer_id))];
    for (const char* s : {"train", "validation", "test"}) j["split"][s] = counts[s];
    return j;
}

void write_data(const fs::path& run, const Dataset& ds, const RunConfig& cfg, const std::string& stage,
                nlohmann::ordered_json extra) {
    const auto dir = run / "data";
    fs::create_directories(dir);
    write_dataset(str(dir), ds);
    const auto split = split_random(ds, cfg.split, cfg.seed);
    write_split(str(dir / "split.csv"), ds, split);
    auto summary = dataset_summary(ds, split);
    for (auto& [k, v] : extra.items()) summary[k] = v;
    write_json(dir / "summary.json", summary);
    log(stage, std::to_string(ds.size()) + " interactions, " + std::to_string(ds.user_ids().size()) + " users, " +
                   std::to_string(ds.question_ids().size()) + " questions -> " + str(dir));
}

// ---- stages ----

void stage_synth(const RunConfig& cfg, const fs::path& run) {
    auto data = generate_synthetic(cfg.synth_config());
    write_data(run, data.dataset, cfg, "synth", {{"source", "synthetic"}});
    auto items = open_text(run / "data" / "truth_items.csv");
    items << "question_id,quiz_id,a,b\n";
    for (const auto& [q, it] : data.truth.items) {
        items << q << ',' << data.truth.quiz_of_question.at(q) << ',' << csv::format_double(it.a) << ','
              << csv::format_double(it.b) << '\n';
    }
    auto users = open_text(run / "data" / "truth_users.csv");
    users << "user_id,initial_theta\n";
    for (const auto& [u, th] : data.truth.initial_theta) users << u << ',' << csv::format_double(th) << '\n';
}

void stage_ingest(const RunConfig& cfg, const fs::path& run) {
    if (cfg.data_dir.empty()) throw ValidationError("data_dir is not set; pass --data_dir or use `ktcli synth`");
    LoadReport rep;
    auto ds = load_dataset(cfg.data_dir, &rep);
    if (ds.size() < 3) throw ValidationError("no usable interactions in " + cfg.data_dir);
    if (rep.interaction_errors) {
        log("ingest", std::to_string(rep.interaction_errors) + " interaction rows dropped (" +
                          std::to_string(rep.inconsistent) + " with inconsistent correctness)");
    }
    nlohmann::ordered_json extra;
    extra["source"] = cfg.data_dir;
    extra["dropped_interactions"] = rep.interaction_errors;
    extra["inconsistent_interactions"] = rep.inconsistent;
    extra["question_errors"] = rep.question_errors;
    extra["student_errors"] = rep.student_errors;
    extra["orphans"] = ds.orphans().size();
    write_data(run, ds, cfg, "ingest", extra);
}

void stage_featurize(const RunConfig&, const fs::path& run) {
    const auto d = load_data(run);
    const auto t = compute_features(d.ds, d.split);
    fs::create_directories(run / "features");
    write_ktft(str(run / "features" / "features.ktft"), t);
    log("featurize", std::to_string(t.rows()) + " rows x " + std::to_string(t.width()) + " features");
}

fs::path models_dir(const fs::path& run) { return run / "models"; }

void stage_train(const RunConfig& cfg, const fs::path& run, const std::vector<std::string>& only) {
    const auto d = load_data(run);
    const auto features = load_features(run, d.ds);
    auto registry = cfg.registry();
    if (!only.empty()) {
        std::vector<ModelSpec> picked;
        for (const auto& spec : registry) {
            if (std::find(only.begin(), only.end(), spec.model_id) != only.end()) picked.push_back(spec);
        }
        for (const auto& id : only) {
            if (!find_spec(registry, id)) throw ValidationError("--only: unknown model_id '" + id + "'");
        }
        registry = std::move(picked);
    }
    const int workers = cfg.resolved_workers();
    PipelineContext ctx{&d.ds, &d.per_row, &features, workers};
    log("train", "training " + std::to_string(registry.size()) + " models on " +
                     std::to_string(ctx.rows(Split::train).size()) + " rows, " + std::to_string(workers) + " workers");
    const auto outcomes = train_members(ctx, registry, workers);
    const auto dir = models_dir(run);
    fs::create_directories(dir);
    std::size_t failed = 0;
    for (const auto& o : outcomes) {
        const auto& id = o.spec.model_id;
        const auto sidecar = dir / (id + ".json");
        if (!o.member) {
            ++failed;
            fs::remove(artifact_path(str(dir), id));
            write_sidecar(str(sidecar), o.spec, o.rows, o.seconds, "failed", o.error);
            log("train", "FAILED " + id + ": " + o.error);
            continue;
        }
        write_file(artifact_path(str(dir), id), o.member->serialize());
        write_sidecar(str(sidecar), o.spec, o.rows, o.seconds, "ok", o.member->warning);
        if (const auto* a = std::get_if<AttentionModel>(&o.member->model)) {
            auto out = open_text(dir / (id + ".loss.csv"));
            write_loss_curve(out, a->report);
        }
        if (o.member->clustering) {
            auto c = open_text(dir / (id + ".clusters.csv"));
            write_cluster_assignment(c, *o.member->clustering);
            auto g = open_text(dir / (id + ".dendrogram.csv"));
            write_dendrogram(g, *o.member->clustering);
        }
        char secs[32];
        std::snprintf(secs, sizeof secs, "%.1fs", o.seconds);
        log("train", id + " ok (" + secs + ")" + (o.member->warning.empty() ? "" : ": " + o.member->warning));
    }
    if (failed == outcomes.size() && failed > 0) throw Error("every selected model failed to train");
}

/// Loads each registry member's artifact; a member whose sidecar records a failure stays absent.
std::vector<MemberOutcome> load_members(const RunConfig& cfg, const fs::path& run) {
    const auto dir = models_dir(run);
    std::vector<MemberOutcome> out;
    for (const auto& spec : cfg.registry()) {
        MemberOutcome o;
        o.spec = spec;
        const auto art = artifact_path(str(dir), spec.model_id);
        if (fs::exists(art)) {
            auto m = FittedMember::deserialize(read_file(art));
            if (m.spec.hyperparameters != spec.hyperparameters || m.spec.seed != spec.seed) {
                throw ValidationError("artifact " + art + " was trained with other settings; re-run `ktcli train`");
            }
            o.member = std::move(m);
        } else {
            const auto sidecar = read_json(dir / (spec.model_id + ".json"), "train");
            if (sidecar.value("status", "") != "failed") {
                throw MissingArtifactError("missing " + art + "; run `ktcli train`");
            }
            o.error = sidecar.value("note", "failed");
        }
        out.push_back(std::move(o));
    }
    return out;
}

void stage_predict(const RunConfig& cfg, const fs::path& run) {
    const auto d = load_data(run);
    const auto features = load_features(run, d.ds);
    auto members = load_members(cfg, run);
    const int workers = cfg.resolved_workers();
    PipelineContext ctx{&d.ds, &d.per_row, &features, workers};
    for (auto [split, name] : {std::pair{Split::validation, "validation"}, std::pair{Split::test, "test"}}) {
        const auto rows = ctx.rows(split);
        const auto X = collect_predictions(members, ctx, rows, workers);
        auto out = open_text(run / "predictions" / (std::string(name) + ".csv"));
        write_prediction_matrix(out, X);
        log("predict", std::string(name) + ": " + std::to_string(X.rows()) + " rows x " + std::to_string(X.cols()) +
                           " models");
    }
}

PredictionMatrix load_matrix(const fs::path& run, const std::string& name) {
    auto in = open_existing(run / "predictions" / (name + ".csv"), "predict");
    return read_prediction_matrix(in);
}

std::vector<int> labels_for(const Dataset& ds, const PredictionMatrix& X) {
    std::vector<int> y;
    for (auto a : X.answer_ids) {
        auto r = ds.row_of_answer(a);
        if (!r) throw ValidationError("prediction row for unknown answer " + std::to_string(a) + "; re-run `ktcli predict`");
        y.push_back(ds[*r].is_correct);
    }
    return y;
}

void stage_ensemble_fit(const RunConfig& cfg, const fs::path& run) {
    const auto d = load_data(run);
    const auto val = load_matrix(run, "validation");
    const auto test = load_matrix(run, "test");
    const auto W = fit_weights(val, labels_for(d.ds, val), cfg.ensemble);
    const auto dir = run / "ensemble";
    auto w = open_text(dir / "weights.csv");
    write_weights_csv(w, W);
    nlohmann::ordered_json fit;
    fit["selected"] = W.selected;
    fit["base_rate"] = W.base_rate;
    fit["excluded_rows"] = W.excluded_rows;
    fit["iters"] = cfg.ensemble.iters;
    fit["lr"] = cfg.ensemble.lr;
    fit["validation_log_loss_trace"] = W.trace;
    write_json(dir / "fit.json", fit);
    std::vector<double> p;
    for (std::size_t r = 0; r < test.rows(); ++r) p.push_back(predict_ensemble(W, test, r).p);
    auto out = open_text(dir / "predictions.csv");
    write_predictions_csv(out, test.answer_ids, p);
    log("ensemble-fit", "validation log-loss " + csv::format_double(W.trace.front()) + " -> " +
                            csv::format_double(W.trace.back()) + " (" + W.selected + ")");
}

EnsembleWeights load_weights(const fs::path& run) {
    auto in = open_existing(run / "ensemble" / "weights.csv", "ensemble-fit");
    auto W = read_weights_csv(in);
    const auto fit = read_json(run / "ensemble" / "fit.json", "ensemble-fit");
    W.base_rate = fit.at("base_rate").get<double>();
    W.selected = fit.at("selected").get<std::string>();
    W.excluded_rows = fit.at("excluded_rows").get<std::size_t>();
    W.trace = fit.at("validation_log_loss_trace").get<std::vector<double>>();
    return W;
}

void stage_evaluate(const RunConfig& cfg, const fs::path& run, bool print) {
    const auto d = load_data(run);
    const auto val = load_matrix(run, "validation");
    const auto test = load_matrix(run, "test");
    const auto W = load_weights(run);
    if (W.model_ids != val.model_ids) throw ValidationError("ensemble weights are stale; re-run `ktcli ensemble-fit`");
    std::vector<std::string> errors, warnings;
    for (const auto& id : val.model_ids) {
        if (!find_spec(cfg.registry(), id)) throw ValidationError("predictions mention unknown model " + id);
        const auto side = read_json(models_dir(run) / (id + ".json"), "train");
        const auto note = side.value("note", "");
        const bool ok = side.value("status", "") == "ok";
        errors.push_back(ok ? "" : (note.empty() ? "failed" : note));
        if (ok && !note.empty()) warnings.push_back(id + ": " + note);
    }
    auto rep = build_report(errors, val, labels_for(d.ds, val), test, labels_for(d.ds, test), W);
    rep.warnings.insert(rep.warnings.end(), warnings.begin(), warnings.end());
    const auto dir = run / "reports";
    {
        auto out = open_text(dir / "report.txt");
        write_report_text(out, rep);
    }
    {
        auto out = open_text(dir / "report.csv");
        write_report_csv(out, rep);
    }
    write_json(dir / "report.json", report_json(rep));
    for (const auto& w : rep.warnings) {
        if (w.starts_with("WARNING")) log("evaluate", w);
    }
    log("evaluate", "reports in " + str(dir));
    if (print) write_report_text(std::cout, rep);
}

template <typename F>
void timed(const fs::path& run, const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    log(stage, "start (" + str(run) + ")");
    f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_timing(run, stage, s);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", s);
    log(stage, std::string("done in ") + buf);
}

std::string key_group(const std::string& name) {
    if (name.starts_with("models.")) return "Model hyperparameters";
    if (name.starts_with("synth.")) return "Synthetic data";
    if (name.starts_with("split.") || name.starts_with("ensemble.")) return "Split and ensemble";
    return "Run";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge tracing ensemble pipeline.\n"
                 "Every config key is also a flag (--synth.n_users 300); flags override the config file."};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "YAML config file");
    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> flag_opts;
    const RunConfig defaults;
    for (const auto& k : config_keys()) {
        flag_opts[k.name] = app.add_option("--" + k.name, flag_values[k.name], k.help)
                                ->group(key_group(k.name))
                                ->type_name(k.name.ends_with("_dir") ? "PATH" : "VALUE")
                                ->default_str(k.get(defaults));
    }

    struct Sub {
        const char* name;
        const char* help;
    };
    std::map<std::string, CLI::App*> subs;
    for (auto [name, help] : std::initializer_list<Sub>{
             {"synth", "generate a synthetic dataset into a new run directory"},
             {"ingest", "validate canonical CSVs from data_dir into a new run directory"},
             {"featurize", "compute leak-free features"},
             {"train", "train registry models"},
             {"predict", "score validation and test rows with every model"},
             {"ensemble-fit", "fit simplex weights on the validation predictions"},
             {"evaluate", "write text/CSV/JSON reports"},
             {"run-all", "synth or ingest, then every later stage, in one run directory"}}) {
        subs[name] = app.add_subcommand(name, help);
        subs[name]->fallthrough();
    }
    std::vector<std::string> only;
    subs["train"]->add_option("--only", only, "train only these model ids");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::string stage;
    for (const auto& [name, sub] : subs) {
        if (sub->parsed()) stage = name;
    }
    try {
        FlatConfig layer;
        if (!config_path.empty()) layer = read_config_file(config_path);
        for (const auto& k : config_keys()) {
            if (flag_opts[k.name]->count()) layer.emplace_back(k.name, flag_values[k.name]);
        }
        RunConfig cfg;
        apply_config(cfg, layer);

        const bool creates = stage == "synth" || stage == "ingest" || stage == "run-all";
        fs::path run;
        if (creates) {
            validate_config(cfg);
            run = create_run_dir(cfg);
            write_json(run / "config.json", config_json(cfg));
        } else {
            run = find_run_dir(cfg);
            if (fs::exists(run / "config.json")) {
                RunConfig merged;
                apply_config(merged, flat_from_json(read_json(run / "config.json", "synth")));
                apply_config(merged, layer);
                cfg = merged;
            }
            validate_config(cfg);
        }

        if (stage == "synth") {
            timed(run, "synth", [&] { stage_synth(cfg, run); });
        } else if (stage == "ingest") {
            timed(run, "ingest", [&] { stage_ingest(cfg, run); });
        } else if (stage == "featurize") {
            timed(run, "featurize", [&] { stage_featurize(cfg, run); });
        } else if (stage == "train") {
            timed(run, "train", [&] { stage_train(cfg, run, only); });
        } else if (stage == "predict") {
            timed(run, "predict", [&] { stage_predict(cfg, run); });
        } else if (stage == "ensemble-fit") {
            timed(run, "ensemble-fit", [&] { stage_ensemble_fit(cfg, run); });
        } else if (stage == "evaluate") {
            timed(run, "evaluate", [&] { stage_evaluate(cfg, run, true); });
        } else {
            const auto t0 = std::chrono::steady_clock::now();
            if (cfg.data_dir.empty()) {
                timed(run, "synth", [&] { stage_synth(cfg, run); });
            } else {
                timed(run, "ingest", [&] { stage_ingest(cfg, run); });
            }
            timed(run, "featurize", [&] { stage_featurize(cfg, run); });
            timed(run, "train", [&] { stage_train(cfg, run, {}); });
            timed(run, "predict", [&] { stage_predict(cfg, run); });
            timed(run, "ensemble-fit", [&] { stage_ensemble_fit(cfg, run); });
            timed(run, "evaluate", [&] { stage_evaluate(cfg, run, true); });
            record_timing(run, "run-all", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        std::cout << str(run) << '\n';
        return 0;
    } catch (const ValidationError& e) {
        log(stage.empty() ? "ktcli" : stage, std::string("error: ") + e.what());
        return 1;
    } catch (const std::exception& e) {
        log(stage.empty() ? "ktcli" : stage, std::string("failed: ") + e.what());
        return 2;
    }
}
