// Copyright 2026 The divhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "divhf/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "divhf/errors.hpp"
#include "divhf/qd.hpp"
#include "divhf/random.hpp"
#include "divhf/service.hpp"
#include "divhf/training.hpp"

namespace divhf::cli {

namespace {

using json = nlohmann::json;

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw StorageError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text)
{
    ensure_dir(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw StorageError("cannot write " + path.string());
        out << text;
        if (!out.flush())
            throw StorageError("write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw StorageError("cannot replace " + path.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const std::string& hint)
{
    if (!fs::exists(path))
        throw MissingInputError(path.string() + " not found; " + hint);
}

void record_step(const RunPaths& paths, const std::string& step, const std::vector<fs::path>& inputs,
                 const std::vector<fs::path>& outputs)
{
    json manifest = {{"format", "divhf-manifest"}, {"steps", json::object()}};
    if (fs::exists(paths.manifest())) {
        std::ifstream in(paths.manifest());
        try {
            manifest = json::parse(in);
        } catch (const json::exception& e) {
            throw StorageError("corrupt manifest " + paths.manifest().string() + ": " + e.what());
        }
    }
    auto hashes = [&](const std::vector<fs::path>& files) {
        json out = json::object();
        for (const auto& f : files)
            out[fs::relative(f, paths.root).generic_string()] = sha256_file(f);
        return out;
    };
    manifest["steps"][step] = {{"inputs", hashes(inputs)}, {"outputs", hashes(outputs)}};
    write_text(paths.manifest(), manifest.dump(2) + "\n");
}

void write_config(const RunConfig& cfg, const RunPaths& paths)
{
    write_text(paths.config(), to_json(cfg).dump(2) + "\n");
}

env::Dataset load_trajectories(const RunConfig& cfg, const RunPaths& paths)
{
    require_file(paths.trajectories(), "run `collect` first");
    auto ds = env::read_dataset(paths.trajectories().string());
    if (ds.empty())
        throw InsufficientDataError("trajectory file is empty");
    const auto& t = ds[0].trajectory;
    if (t.width != cfg.env.feature_width() || t.horizon != cfg.env.horizon)
        throw DimensionError("trajectories have shape " + std::to_string(t.horizon) + "x" +
                             std::to_string(t.width) + " but the config expects " +
                             std::to_string(cfg.env.horizon) + "x" + std::to_string(cfg.env.feature_width()));
    return ds;
}

std::vector<pref::Triplet> query_triplets(const RunConfig& cfg, const env::Dataset& ds)
{
    auto triplets = pref::sample_triplets(ds.size(), cfg.dataset.queries, cfg.seeds.label);
    for (auto& t : triplets)
        for (auto& id : t.ids)
            id = ds[static_cast<std::size_t>(id)].solution.id;
    return triplets;
}

bool is_train_method(const std::string& m)
{
    return std::find(train_methods.begin(), train_methods.end(), m) != train_methods.end();
}

train::LossConfig loss_config(const RunConfig& cfg, train::LossKind kind)
{
    train::LossConfig lc;
    lc.kind = kind;
    lc.temperature = cfg.training.temperature;
    lc.batch_size = cfg.training.batch_size;
    lc.epochs = cfg.training.epochs;
    lc.seed = cfg.seeds.train;
    lc.learning_rate = cfg.training.learning_rate;
    lc.heldout_fraction = cfg.training.heldout_fraction;
    return lc;
}

desc::Checkpoint make_checkpoint(const RunConfig& cfg, const std::string& method, desc::DescriptorModel model)
{
    desc::Checkpoint ck;
    ck.method = method;
    ck.seed = cfg.seeds.train;
    ck.feature_layout = env::feature_layout(cfg.env);
    ck.feature_layout_hash = env::feature_layout_hash(cfg.env);
    ck.unit_normalize = false;
    ck.model = std::move(model);
    return ck;
}

const char* training_header = "epoch,loss,most_similar_acc,most_diverse_acc,preference_acc,pairwise_acc\n";

std::string training_csv(const std::vector<train::EpochMetrics>& history)
{
    std::string out = training_header;
    for (const auto& m : history) {
        out += std::to_string(m.epoch) + "," + format_double(m.loss) + "," +
               format_double(m.heldout.most_similar_acc) + "," + format_double(m.heldout.most_diverse_acc) + "," +
               format_double(m.heldout.preference_acc) + "," + format_double(m.heldout.pairwise_acc) + "\n";
    }
    return out;
}

nlohmann::ordered_json accuracy_json(const std::string& method, const train::AccuracyReport& r, std::size_t n_train,
                                     std::size_t n_heldout)
{
    nlohmann::ordered_json j;
    j["method"] = method;
    j["n_train"] = n_train;
    j["n_heldout"] = n_heldout;
    j["n_evaluated"] = r.n_triplets;
    j["most_similar_acc"] = r.most_similar_acc;
    j["most_diverse_acc"] = r.most_diverse_acc;
    j["preference_acc"] = r.preference_acc;
    j["pairwise_acc"] = r.pairwise_acc;
    return j;
}

const char* me_header =
    "generation,learned_coverage,learned_qd_score,learned_max_fitness,oracle_coverage,oracle_qd_score,"
    "oracle_max_fitness\n";

std::string me_csv(const std::vector<qd::GenerationMetrics>& trace)
{
    std::string out = me_header;
    for (const auto& g : trace) {
        out += std::to_string(g.generation) + "," + std::to_string(g.learned.coverage) + "," +
               format_double(g.learned.qd_score) + "," + format_double(g.learned.max_fitness) + "," +
               std::to_string(g.oracle.coverage) + "," + format_double(g.oracle.qd_score) + "," +
               format_double(g.oracle.max_fitness) + "\n";
    }
    return out;
}

std::shared_ptr<const qd::Centroids> oracle_centroids(const RunConfig& cfg)
{
    const auto samples = qd::uniform_samples(cfg.map_elites.cvt_samples, cfg.env.feet,
                                             derive_seed(cfg.seeds.me, {1}));
    return std::make_shared<qd::Centroids>(
        qd::build_centroids(samples, cfg.map_elites.cells, derive_seed(cfg.seeds.me, {2})));
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw StorageError("cannot read " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InsufficientDataError*>(&e) ||
        dynamic_cast<const ConstructionError*>(&e))
        return exit_bad_config;
    if (dynamic_cast<const MissingInputError*>(&e))
        return exit_missing_input;
    if (dynamic_cast<const TrainingError*>(&e))
        return exit_training_failure;
    if (dynamic_cast<const DimensionError*>(&e))
        return exit_dimension_mismatch;
    return exit_io;
}

std::string sha256_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw StorageError("cannot hash " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw StorageError("sha256 unavailable");
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0)
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i)
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return hex.str();
}

std::string format_double(double v)
{
    std::array<char, 32> buf;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

void override_seeds(RunConfig& cfg, std::uint64_t seed)
{
    cfg.seeds.collect = derive_seed(seed, {0});
    cfg.seeds.label = derive_seed(seed, {1});
    cfg.seeds.train = derive_seed(seed, {2});
    cfg.seeds.me = derive_seed(seed, {3});
}

void collect(const RunConfig& cfg)
{
    cfg.validate();
    const RunPaths paths{cfg.output_dir};
    ensure_dir(paths.root);
    write_config(cfg, paths);
    const auto ds = env::collect(cfg.dataset.trajectories, cfg.env, cfg.dataset.gene_bound, cfg.seeds.collect);
    env::write_dataset(ds, paths.trajectories().string());
    record_step(paths, "collect", {paths.config()}, {paths.trajectories()});
}

LabelSummary label_oracle(const RunConfig& cfg)
{
    cfg.validate();
    const RunPaths paths{cfg.output_dir};
    const auto ds = load_trajectories(cfg, paths);
    write_config(cfg, paths);
    pref::PreferenceStore store(paths.preferences().string(), true);
    LabelSummary summary;
    for (const auto& t : query_triplets(cfg, ds)) {
        const auto labels = pref::oracle_label(t, ds);
        if (labels.tie) {
            ++summary.ties;
            if (cfg.dataset.drop_ties) {
                ++summary.dropped;
                continue;
            }
        }
        pref::PreferenceRecord rec{t, labels.most_similar, labels.most_diverse, pref::Source::oracle,
                                   static_cast<std::int64_t>(summary.written)};
        store.append(rec);
        ++summary.written;
    }
    record_step(paths, "label", {paths.config(), paths.trajectories()}, {paths.preferences()});
    return summary;
}

void label_serve(const RunConfig& cfg, const std::atomic<bool>& stop, const std::function<void(int)>& on_ready)
{
    cfg.validate();
    const RunPaths paths{cfg.output_dir};
    const auto ds = load_trajectories(cfg, paths);
    write_config(cfg, paths);
    pref::PreferenceStore store(paths.preferences().string(), false);
    pref::QueryQueue queue(query_triplets(cfg, ds), &store);
    queue.resume_from(store.load());
    pref::LabelingService service(queue, ds);
    const int port = service.start(cfg.service.host, cfg.service.port);
    if (on_ready)
        on_ready(port);
    while (!stop.load() && queue.progress().pending > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    service.stop();
    record_step(paths, "label", {paths.config(), paths.trajectories()}, {paths.preferences()});
}

void train(const RunConfig& cfg, const std::string& method)
{
    cfg.validate();
    if (!is_train_method(method))
        throw ConfigError("unknown training method '" + method + "'");
    const RunPaths paths{cfg.output_dir};
    const auto ds = load_trajectories(cfg, paths);
    // The auto-encoder trains without labels; preferences only feed its
    // accuracy report when present.
    std::vector<pref::PreferenceRecord> records;
    std::vector<fs::path> inputs{paths.config(), paths.trajectories()};
    if (method != "autoencoder" || fs::exists(paths.preferences())) {
        require_file(paths.preferences(), "run `label` first");
        records = pref::load_preferences(paths.preferences().string());
        inputs.push_back(paths.preferences());
    }
    for (const auto& r : records)
        for (auto id : r.triplet.ids)
            if (!ds.contains(id))
                throw ValidationError("preference references unknown trajectory " + std::to_string(id));
    if (records.empty() && method != "autoencoder")
        throw InsufficientDataError("no preference records to train on or evaluate");
    write_config(cfg, paths);

    const auto split = train::split_records(records, cfg.training.heldout_fraction, cfg.seeds.train);
    const std::size_t width = cfg.env.feature_width();
    const auto& dc = cfg.descriptor;
    const fs::path dir = paths.model_dir(method);
    ensure_dir(dir);

    desc::Checkpoint ck;
    std::vector<train::EpochMetrics> history;
    if (method == "random") {
        auto model = desc::make_descriptor(width, dc.hidden, dc.dim, dc.pooling, cfg.seeds.train);
        const auto& eval_set = split.heldout.empty() ? split.train : split.heldout;
        train::EpochMetrics m;
        m.heldout = train::evaluate_accuracy(model, eval_set, ds);
        history.push_back(m);
        ck = make_checkpoint(cfg, method, std::move(model));
    } else if (method == "autoencoder") {
        auto ae = desc::make_autoencoder(width, dc.hidden, dc.dim, dc.pooling, cfg.seeds.train);
        const auto& eval_set = split.heldout.empty() ? split.train : split.heldout;
        auto res = train::train_autoencoder(std::move(ae), ds, eval_set,
                                            loss_config(cfg, train::LossKind::cross_entropy));
        history = res.history;
        ck = make_checkpoint(cfg, method, res.model.encoder);
        ck.decoder = res.model.decoder;
        ck.optim = res.optim;
    } else {
        const auto kind = method == "divhf" ? train::LossKind::cross_entropy : train::LossKind::vanilla;
        auto model = desc::make_descriptor(width, dc.hidden, dc.dim, dc.pooling, cfg.seeds.train);
        try {
            auto res = train::train(std::move(model), split, ds, loss_config(cfg, kind));
            history = res.history;
            ck = make_checkpoint(cfg, method, res.model);
            ck.optim = res.optim;
        } catch (const train::TrainingDiverged& e) {
            desc::save_checkpoint(make_checkpoint(cfg, method, e.last_valid),
                                  (dir / "last_valid_checkpoint.json").string());
            throw;
        }
    }

    desc::save_checkpoint(ck, paths.checkpoint(method).string());
    write_text(dir / "metrics.csv", training_csv(history));
    write_text(dir / "accuracy.json",
               accuracy_json(method, history.back().heldout, split.train.size(), split.heldout.size()).dump(2) +
                   "\n");
    record_step(paths, "train:" + method, inputs,
                {paths.checkpoint(method), dir / "metrics.csv", dir / "accuracy.json"});
}

void run_me(const RunConfig& cfg, const std::string& method, const std::string& checkpoint)
{
    cfg.validate();
    if (std::find(me_methods.begin(), me_methods.end(), method) == me_methods.end())
        throw ConfigError("unknown MAP-Elites method '" + method + "'");
    const RunPaths paths{cfg.output_dir};
    const auto ds = load_trajectories(cfg, paths);

    std::vector<fs::path> inputs{paths.config(), paths.trajectories()};
    std::unique_ptr<qd::BehaviorDescriptor> descriptor;
    if (method == "oracle") {
        descriptor = std::make_unique<qd::OracleDescriptor>(cfg.env.feet);
    } else {
        const fs::path ck_path = checkpoint.empty() ? paths.checkpoint(method) : fs::path(checkpoint);
        require_file(ck_path, "run `train --method " + method + "` first");
        auto ck = desc::load_checkpoint(ck_path.string());
        if (ck.feature_layout_hash != env::feature_layout_hash(cfg.env))
            throw DimensionError("checkpoint feature layout '" + ck.feature_layout + "' does not match '" +
                                 env::feature_layout(cfg.env) + "'");
        if (ck.model.feature_width() != cfg.env.feature_width())
            throw DimensionError("checkpoint expects " + std::to_string(ck.model.feature_width()) +
                                 " features per step");
        descriptor = std::make_unique<qd::LearnedDescriptor>(std::move(ck.model), ck.unit_normalize);
        inputs.push_back(ck_path);
    }
    write_config(cfg, paths);

    const auto oracle = oracle_centroids(cfg);
    std::shared_ptr<const qd::Centroids> learned = oracle;
    if (method != "oracle")
        learned = std::make_shared<qd::Centroids>(qd::build_centroids(
            qd::describe_dataset(*descriptor, ds), cfg.map_elites.cells, derive_seed(cfg.seeds.me, {3})));

    qd::MeConfig mc;
    mc.generations = cfg.map_elites.generations;
    mc.batch = cfg.map_elites.batch;
    mc.sigma = cfg.map_elites.sigma;
    mc.gene_bound = cfg.dataset.gene_bound;
    mc.seed = cfg.seeds.me;
    const auto res = qd::run_me(*descriptor, learned, oracle, cfg.env, mc);

    const fs::path dir = paths.me_dir(method);
    ensure_dir(dir);
    qd::write_archive(res.learned, (dir / "archive_learned.jsonl").string());
    qd::write_archive(res.oracle, (dir / "archive_oracle.jsonl").string());
    write_text(dir / "metrics.csv", me_csv(res.trace));
    record_step(paths, "run-me:" + method, inputs,
                {dir / "archive_learned.jsonl", dir / "archive_oracle.jsonl", dir / "metrics.csv"});
}

void report(const RunConfig& cfg)
{
    const RunPaths paths{cfg.output_dir};
    std::vector<std::string> done;
    for (const auto& m : me_methods)
        if (fs::exists(paths.me_dir(m) / "metrics.csv"))
            done.push_back(m);
    if (done.empty())
        throw MissingInputError("no MAP-Elites results under " + (paths.root / "me").string());

    std::string summary =
        "method,oracle_coverage,oracle_qd_score,oracle_max_fitness,learned_coverage,preference_acc,pairwise_acc,"
        "most_similar_acc,most_diverse_acc\n";
    std::string curves = "method,generation,oracle_coverage,oracle_qd_score,learned_coverage,learned_qd_score\n";
    std::vector<fs::path> inputs;
    for (const auto& m : done) {
        const fs::path csv = paths.me_dir(m) / "metrics.csv";
        inputs.push_back(csv);
        const auto rows = read_csv(csv);
        if (rows.size() < 2 || rows[0].size() != 7)
            throw ValidationError("malformed " + csv.string());
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (r.size() != 7)
                throw ValidationError("malformed row in " + csv.string());
            curves += m + "," + r[0] + "," + r[4] + "," + r[5] + "," + r[1] + "," + r[2] + "\n";
        }
        const auto& last = rows.back();
        summary += m + "," + last[4] + "," + last[5] + "," + last[6] + "," + last[1];
        const fs::path acc = paths.model_dir(m) / "accuracy.json";
        if (fs::exists(acc)) {
            inputs.push_back(acc);
            std::ifstream in(acc);
            json a;
            try {
                a = json::parse(in);
            } catch (const json::exception& e) {
                throw ValidationError("malformed " + acc.string() + ": " + e.what());
            }
            for (const char* k : {"preference_acc", "pairwise_acc", "most_similar_acc", "most_diverse_acc"})
                summary += "," + format_double(a.at(k).get<double>());
        } else {
            summary += ",,,,";
        }
        summary += "\n";
    }
    write_text(paths.report_dir() / "summary.csv", summary);
    write_text(paths.report_dir() / "curves.csv", curves);
    record_step(paths, "report", inputs, {paths.report_dir() / "summary.csv", paths.report_dir() / "curves.csv"});
}

void run_all(const RunConfig& cfg, const std::vector<std::string>& methods)
{
    collect(cfg);
    label_oracle(cfg);
    for (const auto& m : methods)
        if (m != "oracle")
            train(cfg, m);
    for (const auto& m : methods)
        run_me(cfg, m);
    report(cfg);
}

} // namespace divhf::cli
