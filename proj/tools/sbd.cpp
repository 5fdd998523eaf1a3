// sbd: command-line driver for the SAE bug-detection toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 validation/format/I-O error,
// 3 runtime failure (training diverged, undefined transfer, ...).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "sbd/sbd.hpp"

namespace {

using sbd::Json;

constexpr int kExitUsage = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitRuntime = 3;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool quiet = false;
};

Globals g_globals;

void info(const std::string& msg) {
  if (!g_globals.quiet) std::cerr << msg << '\n';
}

// Loaded inputs are digested for the run manifest.
struct Inputs {
  sbd::RunManifest manifest;

  sbd::ActivationDataset dataset(const std::string& path) {
    const sbd::Bytes bytes = sbd::read_file_bytes(path);
    manifest.inputs.emplace_back(path, sbd::content_digest(bytes));
    try {
      return sbd::read_dataset(bytes);
    } catch (const sbd::Error& e) {
      rethrow_with_path(e, path);
    }
  }

  // "identity" builds M = I, b = 0 at the dataset's width.
  sbd::SaeParams<double> sae(const std::string& spec, std::size_t d) {
    if (spec == "identity") return sbd::SaeParams<double>::identity(d);
    const sbd::Bytes bytes = sbd::read_file_bytes(spec);
    manifest.inputs.emplace_back(spec, sbd::content_digest(bytes));
    try {
      return sbd::read_sae(bytes);
    } catch (const sbd::Error& e) {
      rethrow_with_path(e, spec);
    }
  }

  sbd::Classifier model(const std::string& path) {
    const sbd::Bytes bytes = sbd::read_file_bytes(path);
    manifest.inputs.emplace_back(path, sbd::content_digest(bytes));
    try {
      return sbd::read_model(bytes);
    } catch (const sbd::Error& e) {
      rethrow_with_path(e, path);
    }
  }

  Json json(const std::string& path) {
    const sbd::Bytes bytes = sbd::read_file_bytes(path);
    manifest.inputs.emplace_back(path, sbd::content_digest(bytes));
    try {
      return Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::exception& e) {
      throw sbd::ValidationError(path + ": " + e.what());
    }
  }

 private:
  [[noreturn]] static void rethrow_with_path(const sbd::Error& e, const std::string& path) {
    const std::string msg = path + ": " + e.what();
    if (dynamic_cast<const sbd::UnsupportedFormatError*>(&e)) throw sbd::UnsupportedFormatError(msg);
    if (dynamic_cast<const sbd::ShapeError*>(&e)) throw sbd::ShapeError(msg);
    throw sbd::ValidationError(msg);
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw sbd::IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw sbd::IoError("write failed on '" + path + "'");
}

void write_document(const std::string& path, const Json& doc) { write_text(path, sbd::dump(doc)); }

// ---- shared option groups ----------------------------------------------------

struct ClassifierOpts {
  std::string kind = "forest";
  std::size_t trees = 100;
  std::size_t max_depth = 0;
  std::size_t max_features = 0;
  double lr = 0.5;
  std::size_t max_iter = 20000;

  void add(CLI::App* cmd) {
    cmd->add_option("--classifier", kind, "forest or logistic")
        ->check(CLI::IsMember({"forest", "logistic"}))
        ->capture_default_str();
    cmd->add_option("--trees", trees, "Forest size")->capture_default_str();
    cmd->add_option("--max-depth", max_depth, "Tree depth cap (0 = unlimited)")->capture_default_str();
    cmd->add_option("--max-features", max_features, "Features tried per split (0 = ceil(sqrt(k)))")
        ->capture_default_str();
    cmd->add_option("--logistic-lr", lr, "Logistic regression step size")->capture_default_str();
    cmd->add_option("--logistic-iters", max_iter, "Logistic regression iteration cap")->capture_default_str();
  }

  void apply(sbd::PipelineConfig& cfg) const {
    cfg.classifier = kind == "logistic" ? sbd::ClassifierKind::logistic : sbd::ClassifierKind::forest;
    cfg.forest.n_trees = trees;
    cfg.forest.max_depth = max_depth;
    cfg.forest.max_features = max_features;
    cfg.logistic.learning_rate = lr;
    cfg.logistic.max_iterations = max_iter;
  }

  Json to_json() const {
    return kind == "forest" ? Json{{"classifier", kind}, {"trees", trees}, {"max_depth", max_depth},
                                   {"max_features", max_features}}
                            : Json{{"classifier", kind}, {"logistic_lr", lr}, {"logistic_iters", max_iter}};
  }
};

struct SplitOpts {
  double train_fraction = 0.8;
  bool record_split = false;
  bool full_delta = false;
  std::string pooling = "mean";

  void add(CLI::App* cmd, bool with_delta) {
    cmd->add_option("--train-fraction", train_fraction, "Fraction of pairs used for training")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_flag("--record-split", record_split, "Split snippets independently instead of by pair");
    cmd->add_option("--pooling", pooling, "Pooling for token-only records")
        ->check(CLI::IsMember({"mean", "last", "max"}))
        ->capture_default_str();
    if (with_delta) {
      cmd->add_flag("--full-delta", full_delta, "Compute the feature delta over all pairs, not just training");
    }
  }

  void apply(sbd::PipelineConfig& cfg) const {
    cfg.split.train_fraction = train_fraction;
    cfg.split.unit = record_split ? sbd::SplitUnit::record : sbd::SplitUnit::pair;
    cfg.delta_on_full_dataset = full_delta;
    cfg.pooling_fallback = sbd::parse_pooling(pooling);
  }

  Json to_json() const {
    return {{"train_fraction", train_fraction}, {"split_unit", record_split ? "record" : "pair"},
            {"delta_on", full_delta ? "all" : "train"}, {"pooling", pooling}};
  }
};

void merge(Json& into, const Json& from) {
  for (auto it = from.begin(); it != from.end(); ++it) into[it.key()] = it.value();
}

std::vector<std::size_t> parse_topk_list(const std::vector<std::string>& raw) {
  std::vector<std::size_t> out;
  for (const auto& s : raw) {
    if (s == "all") {
      out.push_back(sbd::kAllFeatures);
      continue;
    }
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || v == 0) throw CLI::ValidationError("--topk", "expected a positive integer or 'all', got " + s);
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

Json topk_json(std::size_t k) { return k == sbd::kAllFeatures ? Json("all") : Json(k); }

std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

// ---- subcommands ---------------------------------------------------------------

struct SynthCmd {
  std::size_t pairs = 100;
  std::uint32_t dim = 16;
  std::uint32_t planted = 3;
  std::vector<std::uint32_t> planted_dims;
  double effect = 4.0;
  double noise = 0.5;
  std::uint32_t tokens = 0;
  std::string model = "synthetic";
  std::uint32_t layer = 0;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "Generate a planted-signal paired activation dataset (SAB)");
    c->add_option("--pairs", pairs, "Number of buggy/patched pairs")->capture_default_str();
    c->add_option("--dim", dim, "Activation width d")->capture_default_str();
    c->add_option("--planted", planted, "Plant the signal on dimensions 0..N-1")->capture_default_str();
    c->add_option("--planted-dims", planted_dims, "Explicit planted dimensions (overrides --planted)")
        ->delimiter(',');
    c->add_option("--effect", effect, "Shift added to planted dims of the buggy member")->capture_default_str();
    c->add_option("--noise", noise, "Scale of the shared Gaussian base vector")->capture_default_str();
    c->add_option("--tokens", tokens, "Token rows per record (0 = pooled-only)")->capture_default_str();
    c->add_option("--model", model, "Model name stored in the file")->capture_default_str();
    c->add_option("--layer", layer, "Layer index stored in the file")->capture_default_str();
    c->add_option("--out", out, "Output SAB file")->required();
    c->callback([this] { run(); });
  }

  void run() {
    sbd::SynthSpec spec;
    spec.n_pairs = pairs;
    spec.d = dim;
    if (planted_dims.empty()) {
      spec.planted_dims.clear();
      for (std::uint32_t i = 0; i < planted; ++i) spec.planted_dims.push_back(i);
    } else {
      spec.planted_dims = planted_dims;
    }
    spec.effect_size = effect;
    spec.noise_scale = noise;
    spec.seed = g_globals.seed;
    spec.tokens_per_record = tokens;
    spec.model_name = model;
    spec.layer_index = layer;
    const auto ds = sbd::synth_paired_dataset(spec);
    sbd::save_dataset(ds, out);
    info("wrote " + std::to_string(ds.records.size()) + " records to " + out);
  }
};

struct TrainSaeCmd {
  std::string data, out, report, granularity = "pooled", pooling = "mean";
  std::size_t hidden = 0;
  sbd::TrainConfig cfg;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train-sae", "Train a tied-weight sparse autoencoder (SWB)");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--hidden", hidden, "Dictionary size d_hid")->required()->check(CLI::PositiveNumber);
    c->add_option("--alpha", cfg.alpha, "L1 sparsity weight")->capture_default_str();
    c->add_option("--lr", cfg.learning_rate, "SGD learning rate")->capture_default_str();
    c->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    c->add_option("--batch", cfg.batch_size, "Mini-batch size")->capture_default_str();
    c->add_option("--init-scale", cfg.init_scale, "Uniform init half-width")->capture_default_str();
    c->add_option("--granularity", granularity, "Train on pooled vectors or token rows")
        ->check(CLI::IsMember({"pooled", "token"}))
        ->capture_default_str();
    c->add_option("--pooling", pooling, "Pooling for token-only records")
        ->check(CLI::IsMember({"mean", "last", "max"}))
        ->capture_default_str();
    c->add_option("--out", out, "Output SWB file")->required();
    c->add_option("--report", report, "Optional JSON training summary");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto fallback = sbd::parse_pooling(pooling);
    std::vector<std::vector<float>> rows;
    for (const auto& r : ds.records) {
      if (granularity == "pooled") {
        rows.push_back(sbd::record_vector(r, fallback));
      } else {
        for (std::uint32_t t = 0; t < r.token_count; ++t) {
          auto row = r.token_row(t, ds.d);
          rows.emplace_back(row.begin(), row.end());
        }
      }
    }
    sbd::Matrix<double> samples(static_cast<Eigen::Index>(rows.size()), ds.d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      samples.row(static_cast<Eigen::Index>(i)) = sbd::to_vector(rows[i]).transpose();
    }
    cfg.seed = g_globals.seed;
    const auto result = sbd::train<double>(samples, hidden, cfg);
    sbd::save_sae(result.params, out);
    info("trained SAE " + std::to_string(hidden) + "x" + std::to_string(ds.d) + ": mean loss " +
         std::to_string(result.initial_mean_loss) + " -> " + std::to_string(result.final_mean_loss));
    if (!report.empty()) {
      in.manifest.command = "train-sae";
      in.manifest.config = {{"hidden", hidden}, {"alpha", cfg.alpha}, {"lr", cfg.learning_rate},
                            {"epochs", cfg.epochs}, {"batch", cfg.batch_size}, {"init_scale", cfg.init_scale},
                            {"granularity", granularity}, {"pooling", pooling}};
      in.manifest.seeds = {{"train", cfg.seed}};
      Json doc = sbd::make_document("train-sae", in.manifest);
      doc["training"] = {{"samples", rows.size()}, {"initial_mean_loss", result.initial_mean_loss},
                         {"final_mean_loss", result.final_mean_loss}, {"epoch_mean_loss", result.epoch_mean_loss}};
      write_document(report, doc);
    }
  }
};

struct EncodeCmd {
  std::string data, sae = "identity", out, granularity = "pooled", pooling = "mean";
  double epsilon = sbd::kDefaultActivityEpsilon;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("encode", "Encode a dataset into sparse codes (JSON)");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--granularity", granularity, "pooled or token")
        ->check(CLI::IsMember({"pooled", "token"}))
        ->capture_default_str();
    c->add_option("--pooling", pooling, "Pooling for token-only records")
        ->check(CLI::IsMember({"mean", "last", "max"}))
        ->capture_default_str();
    c->add_option("--epsilon", epsilon, "Activity threshold for l0")->capture_default_str();
    c->add_option("--out", out, "Output JSON (default: $SBD_CACHE_DIR or stdout)");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    const auto codes =
        sbd::encode_dataset(params, ds, sbd::parse_granularity(granularity), sbd::parse_pooling(pooling), epsilon);
    in.manifest.command = "encode";
    in.manifest.config = {{"sae", sae}, {"granularity", granularity}, {"pooling", pooling}, {"epsilon", epsilon}};
    Json doc = sbd::make_document("codes", in.manifest);
    doc["granularity"] = granularity;
    doc["width"] = codes.width;
    Json entries = Json::array();
    for (const auto& e : codes.entries) {
      std::vector<double> values(e.code.values.begin(), e.code.values.end());
      entries.push_back({{"snippet_id", e.snippet_id}, {"pair_id", e.pair_id}, {"label", e.label},
                         {"token", e.token_position}, {"l0", e.code.l0}, {"l1", e.code.l1}, {"values", values}});
    }
    doc["entries"] = std::move(entries);
    std::string target = out;
    if (target.empty()) {
      if (const char* cache = std::getenv("SBD_CACHE_DIR"); cache && *cache) {
        std::uint64_t key = 0;
        for (const auto& [path, digest] : in.manifest.inputs) key = sbd::mix_seed(key ^ digest);
        key = sbd::mix_seed(key ^ sbd::content_digest(sbd::Bytes(sae.begin(), sae.end())));
        target = (std::filesystem::path(cache) / (sbd::hex_digest(key) + "-" + granularity + ".codes.json")).string();
        info("writing codes to " + target);
      }
    }
    write_document(target, doc);
  }
};

struct SelectCmd {
  std::string data, sae = "identity", out;
  std::size_t topk = 10;
  SplitOpts split;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("select", "Rank SAE features by mean paired |delta| and keep the top k");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--topk", topk, "Number of features to keep")->check(CLI::PositiveNumber)->capture_default_str();
    split.add(c, true);
    c->add_option("--out", out, "Output selection JSON (default stdout)");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    sbd::PipelineConfig cfg;
    split.apply(cfg);
    cfg.set_seed(g_globals.seed);
    const auto source = cfg.delta_on_full_dataset ? ds : sbd::split_pairs(ds, cfg.split).train;
    auto sel = sbd::best_k_features(
        sbd::compute_delta(sbd::encode_dataset(params, source, sbd::Granularity::pooled, cfg.pooling_fallback)),
        topk);
    sel.model_name = ds.model_name;
    sel.layer_index = ds.layer_index;
    write_document(out, sbd::to_json(sel));
  }
};

struct FitCmd {
  std::string data, sae = "identity", selection, out;
  SplitOpts split;
  ClassifierOpts clf;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("fit", "Train a classifier on the selected features of the training split");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--selection", selection, "Selection JSON from 'select'")->required();
    split.add(c, false);
    clf.add(c);
    c->add_option("--out", out, "Output model file (SFM1 or SLM1)")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    const auto sel = sbd::selection_from_json(in.json(selection));
    sbd::PipelineConfig cfg;
    split.apply(cfg);
    clf.apply(cfg);
    cfg.set_seed(g_globals.seed);
    cfg.jobs = g_globals.jobs;
    const auto train = sbd::split_pairs(ds, cfg.split).train;
    const auto codes = sbd::encode_dataset(params, train, sbd::Granularity::pooled, cfg.pooling_fallback);
    const auto model = sbd::fit_classifier(sbd::build_training_set(codes, sel), cfg);
    sbd::save_model(model, out);
    info("wrote " + std::string(sbd::classifier_tag(model)) + " model to " + out);
  }
};

struct EvalCmd {
  std::string data, sae = "identity", selection, model, report, csv, dataset_tag, on = "test";
  bool recheck = false;
  SplitOpts split;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "Score a trained model, or recheck a report's metric identities");
    c->add_option("--data", data, "Input SAB file");
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--selection", selection, "Selection JSON");
    c->add_option("--model", model, "Model file (SFM1/SLM1)");
    c->add_option("--on", on, "Score on the test split or on every record")
        ->check(CLI::IsMember({"test", "all"}))
        ->capture_default_str();
    c->add_option("--dataset-tag", dataset_tag, "Dataset label recorded in the report");
    split.add(c, false);
    c->add_option("--report", report, "Report JSON (output, or input with --recheck)");
    c->add_option("--csv", csv, "Also write a flat CSV table");
    c->add_flag("--recheck", recheck, "Verify an existing report instead of scoring");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    if (recheck) {
      if (report.empty()) throw CLI::RequiredError("--report");
      const auto problems = sbd::recheck_document(in.json(report));
      for (const auto& p : problems) std::cerr << report << ": " << p << '\n';
      if (!problems.empty()) throw sbd::ValidationError(report + ": metric identities do not hold");
      info(report + ": metric identities hold");
      return;
    }
    for (const auto* req : {&data, &selection, &model}) {
      if (req->empty()) throw CLI::RequiredError("--data, --selection and --model");
    }
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    const auto sel = sbd::selection_from_json(in.json(selection));
    const auto clf = in.model(model);
    sbd::PipelineConfig cfg;
    split.apply(cfg);
    cfg.set_seed(g_globals.seed);
    const auto target = on == "all" ? ds : sbd::split_pairs(ds, cfg.split).test;
    auto r = sbd::evaluate(clf, sel, params, target, cfg.pooling_fallback);
    r.dataset_tag = dataset_tag.empty() ? stem(data) : dataset_tag;
    in.manifest.command = "eval";
    in.manifest.config = split.to_json();
    in.manifest.config["sae"] = sae;
    in.manifest.config["on"] = on;
    in.manifest.seeds = {{"split", cfg.split.seed}};
    Json doc = sbd::make_document("eval", in.manifest);
    doc["report"] = sbd::to_json(r);
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::to_csv(std::vector{r}));
  }
};

struct PipelineCmd {
  std::string data, sae = "identity", report, csv, model_out, selection_out, dataset_tag;
  std::string topk = "10";
  SplitOpts split;
  ClassifierOpts clf;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("pipeline", "Split, encode, select top-k, fit and score in one run");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--topk", topk, "Features to keep (integer or 'all')")->capture_default_str();
    c->add_option("--dataset-tag", dataset_tag, "Dataset label (default: file stem)");
    split.add(c, true);
    clf.add(c);
    c->add_option("--report", report, "Report JSON (default stdout)");
    c->add_option("--csv", csv, "Also write a flat CSV table");
    c->add_option("--model-out", model_out, "Save the trained classifier");
    c->add_option("--selection-out", selection_out, "Save the feature selection JSON");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    sbd::PipelineConfig cfg;
    cfg.top_k = parse_topk_list({topk}).front();
    split.apply(cfg);
    clf.apply(cfg);
    cfg.set_seed(g_globals.seed);
    cfg.jobs = g_globals.jobs;
    cfg.dataset_tag = dataset_tag.empty() ? stem(data) : dataset_tag;
    const auto result = sbd::run_pipeline(ds, params, cfg);

    in.manifest.command = "pipeline";
    in.manifest.config = {{"sae", sae}, {"top_k", topk_json(cfg.top_k)}, {"dataset_tag", cfg.dataset_tag}};
    merge(in.manifest.config, split.to_json());
    merge(in.manifest.config, clf.to_json());
    in.manifest.seeds = {{"split", cfg.split.seed}, {"classifier", cfg.forest.seed}};
    Json doc = sbd::make_document("pipeline", in.manifest);
    doc["report"] = sbd::to_json(result.report);
    doc["selection"] = sbd::to_json(result.selection);
    if (!result.importances.empty()) {
      doc["importance"] = {{"features", result.selection.indices},
                           {"importances", result.importances},
                           {"cumulative", sbd::cumulative_importance(result.importances)}};
    }
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::to_csv(std::vector{result.report}));
    if (!model_out.empty()) sbd::save_model(result.model, model_out);
    if (!selection_out.empty()) write_document(selection_out, sbd::to_json(result.selection));
    info("test F1 " + sbd::csv_number(result.report.f1) + ", accuracy " + sbd::csv_number(result.report.accuracy));
  }
};

// --sae accepts one value for every dataset or one per dataset; "none" marks a
// layer without an SAE.
std::vector<std::string> expand_sae_specs(const std::vector<std::string>& saes, std::size_t n) {
  if (saes.size() == 1) return std::vector<std::string>(n, saes.front());
  if (saes.size() != n) {
    throw CLI::ValidationError("--sae", "give one SAE for all datasets or exactly one per dataset");
  }
  return saes;
}

struct SweepCmd {
  std::vector<std::string> data, sae{"identity"};
  std::vector<std::string> topk{"10", "50", "100", "500", "1000"};
  std::string report, csv;
  SplitOpts split;
  ClassifierOpts clf;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("sweep", "Layer x top-k sweep; one best-F1 cell per (model, layer)");
    c->add_option("--data", data, "SAB files, one per layer")->required()->delimiter(',');
    c->add_option("--sae", sae, "SWB files / 'identity' / 'none', one or one per dataset")->delimiter(',');
    c->add_option("--topk", topk, "top-k values to sweep")->delimiter(',');
    split.add(c, true);
    clf.add(c);
    c->add_option("--report", report, "Grid JSON (default stdout)");
    c->add_option("--csv", csv, "Also write a flat CSV table");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto saes = expand_sae_specs(sae, data.size());
    std::vector<sbd::LayerInput> inputs;
    for (std::size_t i = 0; i < data.size(); ++i) {
      sbd::LayerInput li{in.dataset(data[i]), std::nullopt};
      if (saes[i] != "none") li.sae = in.sae(saes[i], li.data.d);
      inputs.push_back(std::move(li));
    }
    const auto ks = parse_topk_list(topk);
    sbd::PipelineConfig cfg;
    split.apply(cfg);
    clf.apply(cfg);
    cfg.set_seed(g_globals.seed);
    const auto grid = sbd::sweep_layers(inputs, ks, cfg, g_globals.jobs);

    in.manifest.command = "sweep";
    Json kjson = Json::array();
    for (auto k : ks) kjson.push_back(topk_json(k));
    in.manifest.config = {{"sae", saes}, {"top_k", kjson}};
    merge(in.manifest.config, split.to_json());
    merge(in.manifest.config, clf.to_json());
    in.manifest.seeds = {{"split", cfg.split.seed}, {"classifier", cfg.forest.seed}};
    Json doc = sbd::make_document("sweep", in.manifest);
    doc["grid"] = sbd::to_json(grid);
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::to_csv(grid));
  }
};

struct TransferCmd {
  std::vector<std::string> data, tags, sae{"identity"};
  std::string topk = "10", report, csv;
  SplitOpts split;
  ClassifierOpts clf;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("transfer", "Train per dataset, score on every dataset, report relative F1 shift");
    c->add_option("--data", data, "SAB files, one per dataset")->required()->delimiter(',');
    c->add_option("--tag", tags, "Dataset tags (default: file stems)")->delimiter(',');
    c->add_option("--sae", sae, "SWB file(s) or 'identity'")->delimiter(',');
    c->add_option("--topk", topk, "Features to keep")->capture_default_str();
    split.add(c, true);
    clf.add(c);
    c->add_option("--report", report, "Transfer JSON (default stdout)");
    c->add_option("--csv", csv, "Also write a flat CSV table");
    c->callback([this] { run(); });
  }

  void run() {
    if (!tags.empty() && tags.size() != data.size()) {
      throw CLI::ValidationError("--tag", "give exactly one tag per dataset");
    }
    Inputs in;
    const auto saes = expand_sae_specs(sae, data.size());
    std::vector<sbd::TransferDomain> domains;
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto ds = in.dataset(data[i]);
      auto params = in.sae(saes[i], ds.d);
      domains.push_back({tags.empty() ? stem(data[i]) : tags[i], std::move(ds), std::move(params)});
    }
    sbd::PipelineConfig cfg;
    cfg.top_k = parse_topk_list({topk}).front();
    split.apply(cfg);
    clf.apply(cfg);
    cfg.set_seed(g_globals.seed);
    cfg.jobs = g_globals.jobs;
    const auto cells = sbd::transfer_study(domains, cfg);

    in.manifest.command = "transfer";
    Json tag_list = Json::array();
    for (const auto& d : domains) tag_list.push_back(d.tag);
    in.manifest.config = {{"sae", saes}, {"tags", tag_list}, {"top_k", topk_json(cfg.top_k)}};
    merge(in.manifest.config, split.to_json());
    merge(in.manifest.config, clf.to_json());
    in.manifest.seeds = {{"split", cfg.split.seed}, {"classifier", cfg.forest.seed}};
    Json doc = sbd::make_document("transfer", in.manifest);
    Json out = Json::array();
    for (const auto& c : cells) out.push_back(sbd::to_json(c));
    doc["transfer"] = std::move(out);
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::to_csv(cells));
  }
};

struct TokensCmd {
  std::string data, sae = "identity", snippet, report, csv;
  std::size_t feature = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("tokens", "Per-token activation of one SAE feature on one snippet");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--snippet", snippet, "snippet_id of the record")->required();
    c->add_option("--feature", feature, "SAE feature index")->required();
    c->add_option("--report", report, "Token report JSON (default stdout)");
    c->add_option("--csv", csv, "Also write a flat CSV table");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    const auto it = std::find_if(ds.records.begin(), ds.records.end(),
                                 [&](const sbd::ActivationRecord& r) { return r.snippet_id == snippet; });
    if (it == ds.records.end()) throw sbd::ValidationError(data + ": no record with snippet_id '" + snippet + "'");
    const auto rows = sbd::token_report(params, *it, feature);
    in.manifest.command = "tokens";
    in.manifest.config = {{"sae", sae}, {"snippet", snippet}, {"feature", feature}};
    Json doc = sbd::make_document("tokens", in.manifest);
    doc["tokens"] = {{"snippet_id", it->snippet_id}, {"pair_id", it->pair_id}, {"label", it->label},
                     {"feature", feature}, {"activations", sbd::to_json(rows)}};
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::to_csv(rows));
  }
};

struct ImportanceCmd {
  std::string model, report, csv;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("importance", "Gini importances and cumulative curve of a forest model");
    c->add_option("--model", model, "Forest model (SFM1)")->required();
    c->add_option("--report", report, "Importance JSON (default stdout)");
    c->add_option("--csv", csv, "Also write the cumulative curve as CSV");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto clf = in.model(model);
    const auto* forest = std::get_if<sbd::ForestModel>(&clf);
    if (!forest) throw sbd::ValidationError(model + ": importances need a random forest model");
    const auto imp = sbd::feature_importances(*forest);
    const auto curve = sbd::cumulative_importance(imp);
    in.manifest.command = "importance";
    Json doc = sbd::make_document("importance", in.manifest);
    doc["importance"] = {{"importances", imp}, {"cumulative", curve}};
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::series_csv("cumulative", curve));
  }
};

struct ActivityCmd {
  std::string data, sae = "identity", granularity = "pooled", pooling = "mean", report, csv;
  double epsilon = sbd::kDefaultActivityEpsilon;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("activity", "Per-feature activation frequency and never-active count");
    c->add_option("--data", data, "Input SAB file")->required();
    c->add_option("--sae", sae, "SWB file or 'identity'")->capture_default_str();
    c->add_option("--granularity", granularity, "pooled or token")
        ->check(CLI::IsMember({"pooled", "token"}))
        ->capture_default_str();
    c->add_option("--pooling", pooling, "Pooling for token-only records")
        ->check(CLI::IsMember({"mean", "last", "max"}))
        ->capture_default_str();
    c->add_option("--epsilon", epsilon, "Activity threshold")->capture_default_str();
    c->add_option("--report", report, "Activity JSON (default stdout)");
    c->add_option("--csv", csv, "Also write frequencies as CSV");
    c->callback([this] { run(); });
  }

  void run() {
    Inputs in;
    const auto ds = in.dataset(data);
    const auto params = in.sae(sae, ds.d);
    const auto codes =
        sbd::encode_dataset(params, ds, sbd::parse_granularity(granularity), sbd::parse_pooling(pooling), epsilon);
    const auto stats = sbd::latent_activity_stats(codes, epsilon);
    in.manifest.command = "activity";
    in.manifest.config = {{"sae", sae}, {"granularity", granularity}, {"pooling", pooling}, {"epsilon", epsilon}};
    Json doc = sbd::make_document("activity", in.manifest);
    doc["activity"] = sbd::to_json(stats);
    write_document(report, doc);
    if (!csv.empty()) write_text(csv, sbd::series_csv("frequency", stats.frequency));
  }
};

Json inspect_bytes(const sbd::Bytes& bytes) {
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  if (magic == "SAB1") {
    const auto ds = sbd::read_dataset(bytes);
    std::size_t tokens = 0, pooled = 0, buggy = 0;
    for (const auto& r : ds.records) {
      tokens += r.token_count;
      pooled += r.pooled ? 1 : 0;
      buggy += r.label == sbd::kBuggy ? 1 : 0;
    }
    return {{"format", "SAB1"}, {"version", sbd::kSabVersion}, {"model", ds.model_name}, {"layer", ds.layer_index},
            {"d", ds.d}, {"pooling", sbd::to_string(ds.pooling)}, {"records", ds.records.size()},
            {"buggy", buggy}, {"patched", ds.records.size() - buggy}, {"token_rows", tokens},
            {"pooled_vectors", pooled}};
  }
  if (magic == "SWB1") {
    const auto h = sbd::read_sae_header(bytes);
    return {{"format", "SWB1"}, {"version", h.version}, {"d_in", h.d_in}, {"d_hid", h.d_hid},
            {"activation", "relu"}, {"sparsity", "l1"}, {"alpha", static_cast<double>(h.alpha)}};
  }
  if (magic == "SFM1") {
    const auto m = std::get<sbd::ForestModel>(sbd::read_model(bytes));
    std::size_t nodes = 0, depth = 0;
    for (const auto& t : m.trees) {
      nodes += t.nodes.size();
      depth = std::max(depth, t.depth());
    }
    return {{"format", "SFM1"}, {"version", sbd::kModelVersion}, {"features", m.n_features},
            {"trees", m.trees.size()}, {"max_depth", m.config.max_depth}, {"max_features", m.config.max_features},
            {"seed", m.config.seed}, {"nodes", nodes}, {"deepest_tree", depth}};
  }
  if (magic == "SLM1") {
    const auto m = std::get<sbd::LogisticModel>(sbd::read_model(bytes));
    return {{"format", "SLM1"}, {"version", sbd::kModelVersion}, {"features", m.n_features()},
            {"seed", m.config.seed}, {"iterations", m.iterations}};
  }
  throw sbd::UnsupportedFormatError("unrecognized file magic");
}

struct InspectCmd {
  std::string file;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("inspect", "Print the header of an SAB/SWB/SFM/SLM file as JSON");
    c->add_option("file", file, "File to inspect")->required();
    c->callback([this] { run(); });
  }

  void run() {
    const auto bytes = sbd::read_file_bytes(file);
    try {
      std::cout << inspect_bytes(bytes).dump(2) << '\n';
    } catch (const sbd::UnsupportedFormatError& e) {
      throw sbd::UnsupportedFormatError(file + ": " + e.what());
    }
  }
};

// ---- usage-error suggestions ----------------------------------------------------

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void collect_flags(const CLI::App* app, std::set<std::string>& names) {
  for (const auto* opt : app->get_options()) {
    for (const auto& n : opt->get_lnames()) names.insert("--" + n);
  }
  for (const auto* sub : app->get_subcommands({})) collect_flags(sub, names);
}

void suggest_flags(const CLI::App& app, int argc, char** argv) {
  std::set<std::string> known;
  collect_flags(&app, known);
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) continue;
    arg = arg.substr(0, arg.find('='));
    if (known.count(arg)) continue;
    std::string best;
    std::size_t best_d = 4;
    for (const auto& k : known) {
      const std::size_t d = edit_distance(arg, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    std::cerr << "unknown flag " << arg;
    if (!best.empty()) std::cerr << " (did you mean " << best << "?)";
    std::cerr << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sbd - sparse-autoencoder features for bug detection"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", g_globals.seed, "Seed for every randomized stage")->capture_default_str();
  app.add_option("--jobs", g_globals.jobs, "Worker threads for independent runs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--quiet", g_globals.quiet, "Suppress progress messages");

  SynthCmd synth;
  TrainSaeCmd train_sae;
  EncodeCmd encode;
  SelectCmd select;
  FitCmd fit;
  EvalCmd eval;
  PipelineCmd pipeline;
  SweepCmd sweep;
  TransferCmd transfer;
  TokensCmd tokens;
  ImportanceCmd importance;
  ActivityCmd activity;
  InspectCmd inspect;
  synth.add(app);
  train_sae.add(app);
  encode.add(app);
  select.add(app);
  fit.add(app);
  eval.add(app);
  pipeline.add(app);
  sweep.add(app);
  transfer.add(app);
  tokens.add(app);
  importance.add(app);
  activity.add(app);
  inspect.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ExtrasError& e) {
    suggest_flags(app, argc, argv);
    app.exit(e);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const sbd::TrainingDivergedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const sbd::UndefinedTransferError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const sbd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
