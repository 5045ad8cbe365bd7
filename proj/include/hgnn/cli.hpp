#pragma once

// Command-line front end. Exit codes: 0 success, 1 validation or usage
// error, 2 runtime failure (I/O, divergence).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hgnn/config.hpp"
#include "hgnn/dataio.hpp"
#include "hgnn/errors.hpp"
#include "hgnn/runtime.hpp"
#include "hgnn/trainer.hpp"

namespace hgnn::cli {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::string data;
    std::string out;
    std::string run;
    std::string grid;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> strategy;
    std::size_t n = 600;
    double noise = 0.1;
};

inline Json read_json_file(const fs::path& path) {
    auto in = detail::open_in(path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const Json& j, const fs::path& path) {
    auto out = detail::open_out(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

/// Built-in defaults, then the config file, then flags.
inline RunConfig resolve_config(const Options& o) {
    RunConfig rc = o.config.empty() ? RunConfig{} : load_config(read_json_file(o.config));
    if (o.seed) rc.train.seed = *o.seed;
    if (o.strategy) {
        auto s = parse_strategy(*o.strategy);
        if (!s) throw ValidationError("--strategy: expected split, group or overall");
        rc.train.strategy = *s;
    }
    validate(rc.train);
    return rc;
}

/// config.json written next to every command's outputs.
inline void write_run_record(const fs::path& dir, const std::string& command, const RunConfig& rc, Json extra = {}) {
    Json j;
    j["command"] = command;
    j["schema_version"] = kSchemaVersion;
    j["formats"] = {{"checkpoint", "HGNNCKPT"}, {"embedding", "HGNNEMB1"}, {"manifest", kSchemaVersion}};
    j["seed"] = rc.train.seed;
    j["config_hash"] = config_hash(rc);
    j["config"] = to_json(rc);
    if (extra.is_object())
        for (auto& [k, v] : extra.items()) j[k] = v;
    write_json_file(j, dir / "config.json");
}

inline Dataset load_data(const Options& o, const Schema& schema) {
    if (o.data.empty()) throw ValidationError("--data is required");
    return read_manifest(o.data, schema);
}

inline fs::path require_out(const Options& o) {
    if (o.out.empty()) throw ValidationError("--out is required");
    fs::create_directories(o.out);
    return o.out;
}

/// One label per model of a strategy: subtype key, group name, or "overall".
inline std::vector<std::string> partition_labels(const Schema& schema, Strategy s) {
    std::vector<std::string> out;
    for (const auto& part : strategy_partition(schema, s)) {
        if (s == Strategy::split) out.push_back(schema.subtypes[static_cast<std::size_t>(part.front())].key);
        else if (s == Strategy::group)
            out.push_back(std::string(group_name(schema.subtypes[static_cast<std::size_t>(part.front())].group)));
        else out.emplace_back("overall");
    }
    return out;
}

inline void write_metrics_csv(const MetricsReport& r, const Schema& schema, const fs::path& path) {
    auto out = detail::open_out(path);
    out << "scope,name,accuracy,macro_f1\n";
    for (const auto& s : r.subtypes)
        out << "subtype," << schema.subtypes[static_cast<std::size_t>(s.subtype)].key << ',' << format_score(s.accuracy)
            << ',' << format_score(s.macro_f1) << '\n';
    for (const auto& g : r.groups)
        out << "group," << group_name(g.group) << ',' << format_score(g.accuracy) << ',' << format_score(g.macro_f1) << '\n';
    out << "overall,all," << format_score(r.accuracy) << ',' << format_score(r.macro_f1) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

template <class T>
Json strategy_json(const StrategyResult<T>& res, const Schema& schema) {
    Json j;
    j["strategy"] = strategy_name(res.strategy);
    Json models = Json::array();
    const auto labels = partition_labels(schema, res.strategy);
    for (std::size_t i = 0; i < res.runs.size(); ++i) {
        Json m;
        m["label"] = labels[i];
        Json heads = Json::array();
        for (int k : res.runs[i].model.subtypes) heads.push_back(schema.subtypes[static_cast<std::size_t>(k)].key);
        m["heads"] = std::move(heads);
        m["loss_curve"] = res.runs[i].loss_curve;
        models.push_back(std::move(m));
    }
    j["models"] = std::move(models);
    j["test"] = to_json(res.test, schema);
    return j;
}

inline Json baseline_json(const Split& split, const Schema& schema) {
    const auto base = majority_baseline(split.train, split.test, schema);
    Json j = Json::object();
    double mean = 0;
    for (std::size_t k = 0; k < base.size(); ++k) {
        j[schema.subtypes[k].key] = base[k];
        mean += base[k];
    }
    j["mean"] = base.empty() ? 0.0 : mean / static_cast<double>(base.size());
    return j;
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const Options& o) {
    const RunConfig rc = resolve_config(o);
    const fs::path out = require_out(o);
    if (!(o.noise >= 0.0 && o.noise <= 1.0)) throw ValidationError("--noise: must lie in [0,1]");
    if (o.n < 2) throw ValidationError("--n: need at least 2 villages");
    const auto syn = generate_synthetic(rc.schema, o.n, rc.train.seed, o.noise);
    write_dataset(syn.dataset, rc.schema, out);
    write_json_file(syn.oracle.to_json(rc.schema), out / "oracle_report.json");
    write_run_record(out, "gen-data", rc, {{"generator", {{"n", o.n}, {"noise", o.noise}, {"seed", rc.train.seed}}}});
    std::cout << "wrote " << o.n << " villages to " << out.string() << '\n';
    return 0;
}

template <class T>
int train_as(const Options& o, const RunConfig& rc, const Dataset& data, const fs::path& out) {
    const Split split = split_dataset(data, rc.train.split_ratio, rc.train.seed, rc.schema);
    const auto res = run_strategy<T>(split, rc.schema, rc.train, rc.train.strategy);
    const auto labels = partition_labels(rc.schema, res.strategy);
    Json ckpts = Json::array();
    for (std::size_t i = 0; i < res.runs.size(); ++i) {
        const std::string rel = "checkpoints/" + labels[i] + ".ckpt";
        save_checkpoint(res.runs[i].model, rc.train, out / rel);
        ckpts.push_back(rel);
    }
    Json metrics = strategy_json(res, rc.schema);
    metrics["majority_baseline"] = baseline_json(split, rc.schema);
    write_json_file(metrics, out / "metrics.json");
    write_metrics_csv(res.test, rc.schema, out / "metrics.csv");
    write_run_record(out, "train", rc,
                     {{"data", o.data}, {"checkpoints", ckpts}, {"split", {{"train", split.train.size()}, {"test", split.test.size()}}}});
    std::cout << "test accuracy " << format_score(res.test.accuracy) << ", macro-F1 " << format_score(res.test.macro_f1)
              << '\n';
    return 0;
}

inline int cmd_train(const Options& o) {
    const RunConfig rc = resolve_config(o);
    const fs::path out = require_out(o);
    const Dataset data = load_data(o, rc.schema);
    return rc.train.precision == Precision::f32 ? train_as<float>(o, rc, data, out) : train_as<double>(o, rc, data, out);
}

/// A finished `train` run: its resolved config and checkpoints.
struct TrainedRun {
    RunConfig config;
    std::vector<fs::path> checkpoints;
    std::vector<std::string> labels;
};

inline TrainedRun load_run(const Options& o) {
    if (o.run.empty()) throw ValidationError("--run is required (a train output directory)");
    const fs::path dir = o.run;
    const Json rec = read_json_file(dir / "config.json");
    if (!rec.contains("config") || !rec.contains("checkpoints"))
        throw SchemaError((dir / "config.json").string() + ": not a train run record");
    TrainedRun r;
    r.config = load_config(rec["config"]);
    for (const auto& c : rec["checkpoints"]) {
        r.checkpoints.push_back(dir / c.get<std::string>());
        r.labels.push_back(fs::path(c.get<std::string>()).stem().string());
    }
    return r;
}

template <class T>
int eval_as(const Options& o, const TrainedRun& run, const Dataset& data, const fs::path& out, bool attention) {
    const RunConfig& rc = run.config;
    const Split split = split_dataset(data, rc.train.split_ratio, rc.train.seed, rc.schema);
    const auto test = encode_all<T>(split.test, rc.schema);
    std::vector<Model<T>> models;
    for (const auto& path : run.checkpoints) models.push_back(load_checkpoint<T>(path).model);
    if (attention) {
        Json files = Json::array();
        for (std::size_t i = 0; i < models.size(); ++i) {
            const fs::path dir = models.size() == 1 ? out : out / run.labels[i];
            fs::create_directories(dir);
            for (const auto& f : export_attention(models[i], test, dir)) files.push_back(fs::relative(f, out).string());
        }
        write_run_record(out, "export-attention", rc, {{"run", o.run}, {"data", o.data}, {"files", files}});
        return 0;
    }
    const auto report = evaluate<T>(std::span<const Model<T>>(models), test);
    Json metrics;
    metrics["test"] = to_json(report, rc.schema);
    metrics["majority_baseline"] = baseline_json(split, rc.schema);
    write_json_file(metrics, out / "eval.json");
    write_metrics_csv(report, rc.schema, out / "eval.csv");
    Json preds = Json::array();
    for (std::size_t v = 0; v < test.size(); ++v) {
        Json village;
        village["village_id"] = split.test.samples[v].village_id;
        Json per = Json::object();
        for (const auto& m : models)
            for (const auto& p : predict(m, test[v])) {
                const auto& st = rc.schema.subtypes[static_cast<std::size_t>(p.subtype)];
                const std::string name = st.class_names.empty()
                                             ? "class" + std::to_string(p.predicted)
                                             : st.class_names[static_cast<std::size_t>(p.predicted)];
                per[st.key] = {{"logits", p.logits},
                               {"predicted", name},
                               {"predicted_index", p.predicted},
                               {"pooled_norm", p.pooled_norm()}};
            }
        village["subtypes"] = std::move(per);
        preds.push_back(std::move(village));
    }
    write_json_file(preds, out / "predictions.json");
    write_run_record(out, "eval", rc, {{"run", o.run}, {"data", o.data}});
    std::cout << "test accuracy " << format_score(report.accuracy) << ", macro-F1 " << format_score(report.macro_f1) << '\n';
    return 0;
}

inline int cmd_eval(const Options& o, bool attention) {
    const TrainedRun run = load_run(o);
    const fs::path out = require_out(o);
    if (fs::equivalent(out, o.run)) throw ValidationError("--out must differ from --run");
    const Dataset data = load_data(o, run.config.schema);
    return run.config.train.precision == Precision::f32 ? eval_as<float>(o, run, data, out, attention)
                                                        : eval_as<double>(o, run, data, out, attention);
}

template <class T>
Json strategy_row(const Split& split, const RunConfig& rc, Strategy s, std::ostream& csv) {
    const auto res = run_strategy<T>(split, rc.schema, rc.train, s);
    csv << strategy_name(s);
    for (SubtypeGroup g : kGroupOrder) {
        auto [acc, f1] = group_scores(res.test, g);
        csv << ',' << format_score(acc) << ',' << format_score(f1);
    }
    csv << ',' << format_score(res.test.accuracy) << ',' << format_score(res.test.macro_f1) << '\n';
    return strategy_json(res, rc.schema);
}

inline int cmd_strategy(const Options& o) {
    Options flagless = o;
    flagless.strategy.reset();
    const RunConfig rc = resolve_config(flagless);
    const fs::path out = require_out(o);
    const Dataset data = load_data(o, rc.schema);
    std::vector<Strategy> which = {Strategy::split, Strategy::group, Strategy::overall};
    if (o.strategy) {
        auto s = parse_strategy(*o.strategy);
        if (!s) throw ValidationError("--strategy: expected split, group or overall");
        which = {*s};
    }
    const Split split = split_dataset(data, rc.train.split_ratio, rc.train.seed, rc.schema);
    auto csv = detail::open_out(out / "strategy.csv");
    csv << "strategy,S_acc,S_f1,V_acc,V_f1,R_acc,R_f1,avg_acc,avg_f1\n";
    Json rows = Json::array();
    for (Strategy s : which)
        rows.push_back(rc.train.precision == Precision::f32 ? strategy_row<float>(split, rc, s, csv)
                                                             : strategy_row<double>(split, rc, s, csv));
    if (!csv) throw IoError("write failed: " + (out / "strategy.csv").string());
    write_json_file({{"strategies", rows}, {"majority_baseline", baseline_json(split, rc.schema)}}, out / "strategy.json");
    write_run_record(out, "strategy", rc, {{"data", o.data}});
    return 0;
}

inline int cmd_ablate(const Options& o) {
    const RunConfig rc = resolve_config(o);
    if (o.grid.empty()) throw ValidationError("--grid is required");
    const fs::path out = require_out(o);
    const Dataset data = load_data(o, rc.schema);
    const auto cells = ablation_grid(o.grid, rc.train);
    const auto rows = run_ablation(data, rc.schema, cells, thread_cap());
    write_ablation(rows, rc.schema, out);
    write_run_record(out, "ablate", rc, {{"data", o.data}, {"grid", o.grid}, {"cells", cells.size()}});
    std::cout << "wrote " << rows.size() << " ablation rows\n";
    return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Hierarchical graph network for village morphology classification"};
    app.require_subcommand(1);
    Options o;

    auto config = [&](CLI::App* c) { c->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile); };
    auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed (overrides config)"); };
    auto data = [&](CLI::App* c) { c->add_option("--data", o.data, "dataset directory or manifest")->required(); };
    auto out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory")->required(); };
    auto run_dir = [&](CLI::App* c) { c->add_option("--run", o.run, "directory written by train")->required(); };
    const std::vector<std::string> grids = {"beta", "edges", "init", "fc", "strategy", "all"};
    const std::vector<std::string> strategies = {"split", "group", "overall"};

    auto* gen = app.add_subcommand("gen-data", "generate synthetic villages with planted rules");
    config(gen);
    seed(gen);
    out(gen);
    gen->add_option("--n", o.n, "number of villages");
    gen->add_option("--noise", o.noise, "label flip probability");

    auto* tr = app.add_subcommand("train", "train with one strategy and evaluate on the held-out split");
    config(tr);
    seed(tr);
    data(tr);
    out(tr);
    tr->add_option("--strategy", o.strategy, "split | group | overall")->check(CLI::IsMember(strategies));

    auto* ev = app.add_subcommand("eval", "evaluate a trained run and dump predictions");
    run_dir(ev);
    data(ev);
    out(ev);

    auto* st = app.add_subcommand("strategy", "compare the three training strategies on one split");
    config(st);
    seed(st);
    data(st);
    out(st);
    st->add_option("--strategy", o.strategy, "run only this strategy")->check(CLI::IsMember(strategies));

    auto* ab = app.add_subcommand("ablate", "run an ablation grid");
    config(ab);
    seed(ab);
    data(ab);
    out(ab);
    ab->add_option("--grid", o.grid, "beta | edges | init | fc | strategy | all")->required()->check(CLI::IsMember(grids));

    auto* ex = app.add_subcommand("export-attention", "write mean attention matrices of a trained run");
    run_dir(ex);
    data(ex);
    out(ex);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (tr->parsed()) return cmd_train(o);
        if (ev->parsed()) return cmd_eval(o, false);
        if (st->parsed()) return cmd_strategy(o);
        if (ab->parsed()) return cmd_ablate(o);
        if (ex->parsed()) return cmd_eval(o, true);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

} // namespace hgnn::cli
