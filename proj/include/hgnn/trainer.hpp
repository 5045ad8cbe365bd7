#pragma once

// Training loop (per-sample AdamW), evaluation, the split/group/overall
// strategies, the ablation grid, checkpoints and attention export.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hgnn/config.hpp"
#include "hgnn/dataio.hpp"
#include "hgnn/errors.hpp"
#include "hgnn/heads.hpp"
#include "hgnn/metrics.hpp"
#include "hgnn/model.hpp"
#include "hgnn/optim.hpp"

namespace hgnn {

template <class T>
struct TrainResult {
    Model<T> model;
    std::vector<double> loss_curve;  // mean joint loss per epoch
};

/// Called after each epoch with (1-based epoch, model); return false to stop early.
template <class T>
using EpochHook = std::function<bool(int, const Model<T>&)>;

namespace detail {

/// First parameter group holding a non-finite value, else the first with a non-finite gradient.
template <class T>
std::string offending_group(const Model<T>& model, const std::vector<const Mat<T>*>& grads) {
    std::string found;
    std::size_t i = 0;
    model.params.for_each(model.schema, [&](const std::string& name, const char* group, const Mat<T>& m) {
        if (found.empty() && !m.allFinite()) found = std::string(group) + " (" + name + ")";
        ++i;
    });
    if (!found.empty()) return found;
    i = 0;
    model.params.for_each(model.schema, [&](const std::string& name, const char* group, const Mat<T>&) {
        if (found.empty() && i < grads.size() && grads[i] && !grads[i]->allFinite())
            found = std::string(group) + " gradient (" + name + ")";
        ++i;
    });
    return found.empty() ? std::string("inputs") : found;
}

} // namespace detail

/// Full passes in seeded-shuffled order with one AdamW update per village.
template <class T>
TrainResult<T> train(const std::vector<EncodedSample<T>>& data, const Schema& schema, const TrainConfig& config,
                     std::vector<int> subtypes, const EpochHook<T>& hook = {}) {
    if (data.empty()) throw ContractError("train: empty dataset");
    validate(config);
    TrainResult<T> result{make_model<T>(schema, config.model, std::move(subtypes), config.seed), {}};
    Model<T>& model = result.model;

    std::vector<Mat<T>*> params;
    model.params.for_each(model.schema, [&](const std::string&, const char*, Mat<T>& m) { params.push_back(&m); });
    AdamW<T> opt(config.adamw);
    std::mt19937_64 order_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> labels(model.subtypes.size());
    std::vector<const Mat<T>*> grads(params.size());

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double total = 0;
        for (std::size_t idx : order) {
            const auto& sample = data[idx];
            Tape<T> tape;
            auto bound = bind(tape, model.params);
            auto trace = forward(tape, model, bound, sample);
            auto heads = apply_heads(model, bound, trace);
            for (std::size_t h = 0; h < model.subtypes.size(); ++h)
                labels[h] = sample.labels.at(static_cast<std::size_t>(model.subtypes[h]));
            auto loss = joint_loss<T>(heads.logits, labels);
            tape.backward(loss.total);
            for (std::size_t i = 0; i < params.size(); ++i) grads[i] = tape.grad(bound.all[i]);
            const double value = static_cast<double>(loss.total.value()(0, 0));
            if (!std::isfinite(value))
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      ": non-finite loss; first offending parameter group: " +
                                      detail::offending_group(model, grads));
            total += value;
            opt.step(params, grads);
        }
        result.loss_curve.push_back(total / static_cast<double>(data.size()));
        if (hook && !hook(epoch, model)) break;
    }
    return result;
}

/// Per-subtype scores for every subtype covered by the given models. Pure.
template <class T>
MetricsReport evaluate(std::span<const Model<T>> models, const std::vector<EncodedSample<T>>& data) {
    if (models.empty()) throw ContractError("evaluate: no models");
    const Schema& schema = models.front().schema;
    std::vector<std::vector<int>> truth(schema.subtypes.size()), pred(schema.subtypes.size());
    std::vector<bool> covered(schema.subtypes.size(), false);
    for (const auto& model : models) {
        for (int k : model.subtypes) covered[static_cast<std::size_t>(k)] = true;
        for (const auto& s : data)
            for (const auto& p : predict(model, s)) {
                truth[static_cast<std::size_t>(p.subtype)].push_back(s.labels.at(static_cast<std::size_t>(p.subtype)));
                pred[static_cast<std::size_t>(p.subtype)].push_back(p.predicted);
            }
    }
    std::vector<SubtypeMetrics> per;
    for (std::size_t k = 0; k < schema.subtypes.size(); ++k)
        if (covered[k]) per.push_back(score_subtype(static_cast<int>(k), schema.subtypes[k].num_classes, truth[k], pred[k]));
    return aggregate(std::move(per), schema);
}

template <class T>
MetricsReport evaluate(const Model<T>& model, const std::vector<EncodedSample<T>>& data) {
    return evaluate<T>(std::span<const Model<T>>(&model, 1), data);
}

/// Accuracy of predicting the training split's most frequent class, per subtype, on `test`.
inline std::vector<double> majority_baseline(const Dataset& train, const Dataset& test, const Schema& schema) {
    std::vector<double> out;
    for (const auto& st : schema.subtypes) {
        std::vector<long> counts(static_cast<std::size_t>(st.num_classes), 0);
        for (const auto& v : train.samples) ++counts[static_cast<std::size_t>(v.labels.at(st.key))];
        const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        long hit = 0;
        for (const auto& v : test.samples) hit += v.labels.at(st.key) == majority;
        out.push_back(test.size() ? static_cast<double>(hit) / static_cast<double>(test.size()) : 0.0);
    }
    return out;
}

/// Subtype sets trained together: one per subtype, one per group, or all at once.
inline std::vector<std::vector<int>> strategy_partition(const Schema& schema, Strategy s) {
    std::vector<std::vector<int>> out;
    switch (s) {
    case Strategy::split:
        for (int k = 0; k < schema.num_subtypes(); ++k) out.push_back({k});
        break;
    case Strategy::group:
        for (SubtypeGroup g : kGroupOrder)
            if (auto members = schema.subtypes_in_group(g); !members.empty()) out.push_back(std::move(members));
        break;
    case Strategy::overall: {
        std::vector<int> all(static_cast<std::size_t>(schema.num_subtypes()));
        std::iota(all.begin(), all.end(), 0);
        out.push_back(std::move(all));
        break;
    }
    }
    return out;
}

template <class T>
struct StrategyResult {
    Strategy strategy = Strategy::overall;
    std::vector<TrainResult<T>> runs;
    MetricsReport test;

    std::vector<Model<T>> models() const {
        std::vector<Model<T>> out;
        for (const auto& r : runs) out.push_back(r.model);
        return out;
    }
};

template <class T>
StrategyResult<T> run_strategy(const Split& split, const Schema& schema, TrainConfig config, Strategy strategy) {
    config.strategy = strategy;
    const auto train_data = encode_all<T>(split.train, schema);
    const auto test_data = encode_all<T>(split.test, schema);
    StrategyResult<T> out;
    out.strategy = strategy;
    for (auto& subtypes : strategy_partition(schema, strategy))
        out.runs.push_back(train<T>(train_data, schema, config, std::move(subtypes)));
    const auto models = out.models();
    out.test = evaluate<T>(std::span<const Model<T>>(models), test_data);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "HGNNCKPT", u32 schema_version, u32 length + config JSON,
// u32 tensor count, then per tensor u32 name length + name, u32 rows,
// u32 cols, rows*cols f32. Little-endian throughout.

inline constexpr char kCheckpointMagic[8] = {'H', 'G', 'N', 'N', 'C', 'K', 'P', 'T'};

template <class T>
void save_checkpoint(const Model<T>& model, const TrainConfig& config, const std::filesystem::path& path) {
    Json echo = to_json(RunConfig{model.schema, config});
    Json heads = Json::array();
    for (int k : model.subtypes) heads.push_back(model.schema.subtypes[static_cast<std::size_t>(k)].key);
    echo["heads"] = std::move(heads);
    const std::string text = echo.dump();
    auto out = detail::open_out(path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_le<std::uint32_t>(out, kSchemaVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::uint32_t count = 0;
    model.params.for_each(model.schema, [&](const std::string&, const char*, const Mat<T>&) { ++count; });
    detail::put_le<std::uint32_t>(out, count);
    model.params.for_each(model.schema, [&](const std::string& name, const char*, const Mat<T>& m) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
        for (Index i = 0; i < m.size(); ++i) detail::put_le<float>(out, static_cast<float>(m.data()[i]));
    });
    if (!out) throw IoError("write failed: " + path.string());
}

template <class T>
struct LoadedCheckpoint {
    Model<T> model;
    TrainConfig config;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    const std::string what = path.string();
    char magic[8];
    if (!in.read(magic, sizeof(magic))) throw FormatError(what + ": truncated file");
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw FormatError(what + ": bad magic");
    const auto version = detail::get_le<std::uint32_t>(in, what);
    if (version != static_cast<std::uint32_t>(kSchemaVersion))
        throw FormatError(what + ": unsupported schema_version " + std::to_string(version));
    const auto len = detail::get_le<std::uint32_t>(in, what);
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw FormatError(what + ": truncated file");
    Json echo;
    try {
        echo = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw FormatError(what + ": corrupt config echo: " + e.what());
    }
    const Json heads = echo.value("heads", Json::array());
    echo.erase("heads");
    RunConfig rc = load_config(echo);
    std::vector<int> subtypes;
    for (const auto& key : heads) {
        auto k = rc.schema.subtype_index(key.get<std::string>());
        if (!k) throw FormatError(what + ": unknown head '" + key.get<std::string>() + "'");
        subtypes.push_back(*k);
    }
    LoadedCheckpoint<T> out{make_model<T>(rc.schema, rc.train.model, subtypes, 0), rc.train};
    const auto count = detail::get_le<std::uint32_t>(in, what);
    std::uint32_t expected = 0;
    out.model.params.for_each(out.model.schema, [&](const std::string&, const char*, Mat<T>&) { ++expected; });
    if (count != expected)
        throw FormatError(what + ": holds " + std::to_string(count) + " tensors, config implies " + std::to_string(expected));
    out.model.params.for_each(out.model.schema, [&](const std::string& name, const char*, Mat<T>& m) {
        const auto name_len = detail::get_le<std::uint32_t>(in, what);
        std::string stored(name_len, '\0');
        if (!in.read(stored.data(), name_len)) throw FormatError(what + ": truncated file");
        if (stored != name) throw FormatError(what + ": expected tensor '" + name + "', found '" + stored + "'");
        const auto rows = detail::get_le<std::uint32_t>(in, what);
        const auto cols = detail::get_le<std::uint32_t>(in, what);
        if (rows != m.rows() || cols != m.cols())
            throw FormatError(what + ": tensor '" + name + "' has shape " + numgrad::shape_str(rows, cols));
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(detail::get_le<float>(in, what));
    });
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes");
    return out;
}

// ---------------------------------------------------------------------------
// Attention export

/// Mean attention matrix per layer over a dataset.
template <class T>
std::vector<Mat<double>> mean_attention(const Model<T>& model, const std::vector<EncodedSample<T>>& data) {
    const Index m = model.schema.graph.num_comm();
    std::vector<Mat<double>> out(static_cast<std::size_t>(model.config.layers), Mat<double>::Zero(m, m));
    for (const auto& s : data) {
        Tape<T> tape;
        auto bound = bind(tape, model.params);
        auto tr = forward(tape, model, bound, s);
        for (std::size_t l = 0; l < tr.attn.size(); ++l) out[l] += tr.attn[l].value().template cast<double>();
    }
    if (!data.empty())
        for (auto& a : out) a /= static_cast<double>(data.size());
    return out;
}

inline void write_attention_csv(const Mat<double>& alpha, const std::vector<Category>& nodes,
                                const std::filesystem::path& path) {
    auto out = detail::open_out(path);
    out << "node";
    for (Category c : nodes) out << ',' << category_name(c);
    out << '\n' << std::fixed << std::setprecision(10);
    for (Index i = 0; i < alpha.rows(); ++i) {
        out << category_name(nodes[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < alpha.cols(); ++j) out << ',' << alpha(i, j);
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

/// Writes attention_layer<l>.csv for every layer; the last file is the final layer.
template <class T>
std::vector<std::filesystem::path> export_attention(const Model<T>& model, const std::vector<EncodedSample<T>>& data,
                                                    const std::filesystem::path& dir) {
    const auto mats = mean_attention(model, data);
    std::vector<std::filesystem::path> files;
    for (std::size_t l = 0; l < mats.size(); ++l) {
        files.push_back(dir / ("attention_layer" + std::to_string(l + 1) + ".csv"));
        write_attention_csv(mats[l], model.schema.graph.comm_categories, files.back());
    }
    return files;
}

/// Parses an attention CSV back into a matrix plus its header labels.
inline std::pair<Mat<double>, std::vector<std::string>> read_attention_csv(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    Mat<double> m(static_cast<Index>(rows.size()), static_cast<Index>(header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != header.size()) throw FormatError(path.string() + ": ragged row");
        for (std::size_t j = 0; j < header.size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
    return {m, header};
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationCell {
    std::string axis;
    std::string value;
    TrainConfig config;
};

inline constexpr const char* kGridNames[] = {"beta", "edges", "init", "fc", "strategy", "all"};

/// Cells varying one axis away from `base`. "all" is beta + edges + init + fc.
inline std::vector<AblationCell> ablation_grid(std::string_view grid, const TrainConfig& base) {
    std::vector<AblationCell> cells;
    auto add = [&](std::string axis, std::string value, auto&& edit) {
        TrainConfig c = base;
        edit(c);
        cells.push_back({std::move(axis), std::move(value), c});
    };
    const bool all = grid == "all";
    if (grid == "beta" || all)
        for (int i = 1; i <= 9; ++i) {
            const double beta = i / 10.0;
            std::ostringstream v;
            v << std::fixed << std::setprecision(1) << beta;
            add("beta", v.str(), [beta](TrainConfig& c) { c.model.beta = beta; });
        }
    if (grid == "edges" || all)
        for (CommEdgeMode m : {CommEdgeMode::gat, CommEdgeMode::gcn})
            add("comm_edges", std::string(comm_edges_name(m)), [m](TrainConfig& c) { c.model.comm_edges = m; });
    if (grid == "init" || all)
        for (InitMode m : {InitMode::random, InitMode::mean})
            add("init", std::string(init_name(m)), [m](TrainConfig& c) { c.model.init = m; });
    if (grid == "fc" || all)
        for (ExpansionMode m : {ExpansionMode::affine, ExpansionMode::tile})
            add("expansion", std::string(expansion_name(m)), [m](TrainConfig& c) { c.model.expansion = m; });
    if (grid == "strategy")
        for (Strategy s : {Strategy::split, Strategy::group, Strategy::overall})
            add("strategy", std::string(strategy_name(s)), [s](TrainConfig& c) { c.strategy = s; });
    if (cells.empty()) throw ValidationError("unknown grid '" + std::string(grid) + "'");
    return cells;
}

struct AblationRow {
    std::string axis;
    std::string value;
    std::string config_hash;
    std::uint64_t seed = 0;
    MetricsReport test;
    std::vector<double> final_losses;  // one per trained model
    Json config;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions propagate (first one wins).
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (unsigned t = 0; t < threads; ++t)
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

template <class T>
AblationRow run_cell(const AblationCell& cell, const Dataset& data, const Schema& schema) {
    const Split split = split_dataset(data, cell.config.split_ratio, cell.config.seed, schema);
    auto result = run_strategy<T>(split, schema, cell.config, cell.config.strategy);
    AblationRow row;
    row.axis = cell.axis;
    row.value = cell.value;
    const RunConfig rc{schema, cell.config};
    row.config_hash = config_hash(rc);
    row.seed = cell.config.seed;
    row.test = std::move(result.test);
    for (const auto& r : result.runs) row.final_losses.push_back(r.loss_curve.empty() ? 0.0 : r.loss_curve.back());
    row.config = to_json(rc);
    return row;
}

/// Trains every cell on the same seeded split; rows come back in grid order.
inline std::vector<AblationRow> run_ablation(const Dataset& data, const Schema& schema,
                                             const std::vector<AblationCell>& cells, unsigned threads = 1) {
    std::vector<AblationRow> rows(cells.size());
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        rows[i] = cells[i].config.precision == Precision::f32 ? run_cell<float>(cells[i], data, schema)
                                                              : run_cell<double>(cells[i], data, schema);
    });
    return rows;
}

inline std::pair<double, double> group_scores(const MetricsReport& r, SubtypeGroup g) {
    for (const auto& gm : r.groups)
        if (gm.group == g) return {gm.accuracy, gm.macro_f1};
    return {std::nan(""), std::nan("")};
}

inline std::string format_score(double x) {
    if (std::isnan(x)) return "";
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << x;
    return s.str();
}

inline void write_ablation(const std::vector<AblationRow>& rows, const Schema& schema, const std::filesystem::path& dir) {
    {
        auto out = detail::open_out(dir / "ablation.csv");
        out << "axis,value,config_hash,seed,S_acc,S_f1,V_acc,V_f1,R_acc,R_f1,avg_acc,avg_f1\n";
        for (const auto& r : rows) {
            out << r.axis << ',' << r.value << ',' << r.config_hash << ',' << r.seed;
            for (SubtypeGroup g : kGroupOrder) {
                auto [acc, f1] = group_scores(r.test, g);
                out << ',' << format_score(acc) << ',' << format_score(f1);
            }
            out << ',' << format_score(r.test.accuracy) << ',' << format_score(r.test.macro_f1) << '\n';
        }
        if (!out) throw IoError("write failed: " + (dir / "ablation.csv").string());
    }
    Json j = Json::array();
    for (const auto& r : rows) {
        Json e;
        e["axis"] = r.axis;
        e["value"] = r.value;
        e["config_hash"] = r.config_hash;
        e["seed"] = r.seed;
        e["metrics"] = to_json(r.test, schema);
        e["final_losses"] = r.final_losses;
        e["config"] = r.config;
        j.push_back(std::move(e));
    }
    auto out = detail::open_out(dir / "ablation.json");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + (dir / "ablation.json").string());
}

} // namespace hgnn
