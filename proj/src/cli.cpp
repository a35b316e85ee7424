#include "ktm/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "ktm/encoder.hpp"
#include "ktm/eval.hpp"
#include "ktm/fm_model.hpp"
#include "ktm/format.hpp"
#include "ktm/io.hpp"
#include "ktm/synth.hpp"
#include "ktm/trainers.hpp"

namespace ktm {

using nlohmann::json;

namespace {

struct DataFlags {
  std::string data;
  std::string qmatrix;
  std::string format = "triplets";
  std::string id_order = "sorted";
  std::string vocab;

  void add_to(CLI::App* app, bool data_required = true) {
    auto* opt = app->add_option("--data", data, "Triplet CSV (user_id,item_id,correct[,extras...])");
    if (data_required) opt->required();
    app->add_option("--qmatrix", qmatrix, "Q-matrix CSV (items x skills, 0/1, no header)");
    app->add_option("--format", format, "Input format")->check(CLI::IsMember({"triplets", "assistments"}));
    app->add_option("--id-order", id_order, "Dense id assignment")->check(CLI::IsMember({"sorted", "appearance"}));
    app->add_option("--vocab", vocab, "Vocabulary JSON fixing the id mapping");
  }

  std::vector<std::string> input_paths() const {
    std::vector<std::string> paths;
    for (const auto* p : {&data, &qmatrix, &vocab})
      if (!p->empty()) paths.push_back(*p);
    return paths;
  }
};

struct TrainFlags {
  std::string preset = "irt";
  std::size_t dim = 0;
  std::string link = "probit";
  TrainConfig config;
  std::size_t burn_in = 0;
  CLI::Option* burn_in_opt = nullptr;

  void add_to(CLI::App* app, bool with_preset = true) {
    if (with_preset) {
      app->add_option("--preset", preset, "Encoding preset (IRT, MIRTb, AFM, PFA, iswf, iswfe or a block code)");
      app->add_option("--d", dim, "Embedding dimension");
    }
    app->add_option("--link", link, "logit (MAP gradient descent) or probit (Gibbs sampling)")
        ->check(CLI::IsMember({"logit", "probit"}));
    app->add_option("--epochs,--iters", config.epochs, "Epochs (MAP) or iterations (Gibbs)");
    app->add_option("--seed", config.seed, "Random seed");
    app->add_option("--lr", config.learning_rate, "SGD learning rate (MAP)");
    app->add_option("--l2", config.l2, "L2 strength (MAP)");
    app->add_option("--init-std", config.init_std, "Std of the initial embeddings");
    burn_in_opt = app->add_option("--burn-in", burn_in, "Gibbs burn-in iterations")->default_str("20% of --epochs");
    app->add_flag("--full-batch", config.full_batch, "Full-batch gradient descent instead of SGD (MAP)");
  }

  TrainConfig resolved() const {
    TrainConfig c = config;
    c.dim = dim;
    if (burn_in_opt != nullptr && burn_in_opt->count() > 0) c.burn_in = burn_in;
    return c;
  }
};

struct LoadedData {
  Dataset dataset;
  Vocabulary vocab;
};

LoadedData load_data(const DataFlags& flags, const Vocabulary* fixed) {
  if (flags.format == "assistments") {
    auto [dataset, vocab] = load_assistments(flags.data);
    if (fixed != nullptr && fixed->digest() != vocab.digest())
      throw std::runtime_error("ASSISTments file yields a different vocabulary than the model's");
    return {std::move(dataset), std::move(vocab)};
  }
  std::optional<Vocabulary> from_file;
  if (fixed == nullptr && !flags.vocab.empty()) from_file = Vocabulary::from_json(json::parse(read_file(flags.vocab)));
  TripletLoadOptions options;
  options.id_order = parse_id_order(flags.id_order);
  options.vocabulary = fixed != nullptr ? fixed : (from_file ? &*from_file : nullptr);
  TripletLog log = load_triplets(flags.data, options);
  std::optional<QMatrix> q;
  if (!flags.qmatrix.empty()) q = load_qmatrix(flags.qmatrix);
  Dataset dataset = make_dataset(log, std::move(q));
  return {std::move(dataset), std::move(log.vocab)};
}

DesignMatrix encode_with(const LoadedData& loaded, EncodingConfig& config) {
  if (config.use_extras) config.extra_columns = loaded.dataset.extras.columns;
  return encode_dataset(loaded.dataset.triplets, loaded.dataset.qmatrix, config, loaded.dataset.students,
                        loaded.dataset.extras);
}

json options_json(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help" || name == "--config" || name.empty()) continue;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      j[name] = results.size() == 1 ? json(results.front()) : json(results);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

class Manifest {
 public:
  Manifest(const CLI::App* app, std::uint64_t seed) : app_(app), seed_(seed), started_(utc_timestamp()) {}

  void write(const std::string& path, const std::vector<std::string>& inputs) const {
    RunManifest m;
    m.command = app_->get_name();
    m.config = options_json(app_);
    m.seed = seed_;
    m.started_at = started_;
    m.finished_at = utc_timestamp();
    std::vector<std::string> all = inputs;
    if (const CLI::Option* cfg = app_->get_parent()->get_config_ptr(); cfg != nullptr && cfg->count() > 0)
      all.push_back(cfg->as<std::string>());
    for (const auto& in : all) m.inputs.emplace_back(in, file_sha256(in));
    write_file(path, m.to_json().dump(1) + "\n");
  }

 private:
  const CLI::App* app_;
  std::uint64_t seed_;
  std::string started_;
};

std::string manifest_path(const std::string& output, const std::string& flag) {
  return flag.empty() ? output + ".manifest.json" : flag;
}

std::vector<std::string> split_list(const std::vector<std::string>& values) {
  std::vector<std::string> out;
  for (const auto& v : values) {
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_train_log_line(std::ostream& log, const EpochStats& s, bool with_test) {
  log << s.epoch << ',' << format_double(s.train_nll);
  if (with_test)
    log << ',' << (s.test_acc ? format_double(*s.test_acc) : "NA") << ','
        << (s.test_auc ? format_double(*s.test_auc) : "NA") << ','
        << (s.test_nll ? format_double(*s.test_nll) : "NA");
  log << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge tracing machines: factorization machines for student modeling", "ktm"};
  app.set_config("--config", "", "TOML/INI file with flag values; command-line flags win");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::string manifest_flag;

  // encode
  auto* encode = app.add_subcommand("encode", "Encode a log into a design matrix");
  DataFlags encode_data;
  std::string encode_preset = "iswf", encode_out, encode_vocab_out;
  encode_data.add_to(encode);
  encode->add_option("--preset", encode_preset, "Encoding preset");
  encode->add_option("--out", encode_out, "Design matrix output")->required();
  encode->add_option("--vocab-out", encode_vocab_out, "Write the id vocabulary as JSON");
  encode->add_option("--manifest", manifest_flag, "Manifest path (default <out>.manifest.json)");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  DataFlags train_data;
  TrainFlags train_flags;
  std::string train_out, train_log, train_test;
  train_data.add_to(train);
  train_flags.add_to(train);
  train->add_option("--out", train_out, "Model JSON output")->required();
  train->add_option("--log", train_log, "Per-epoch training log CSV");
  train->add_option("--test", train_test, "Held-out triplet CSV scored in the log");
  train->add_option("--manifest", manifest_flag, "Manifest path (default <out>.manifest.json)");

  // predict
  auto* predict = app.add_subcommand("predict", "Predict success probabilities");
  DataFlags predict_data;
  std::string predict_model, predict_out;
  predict_data.add_to(predict);
  predict->add_option("--model", predict_model, "Model JSON")->required();
  predict->add_option("--out", predict_out, "Predictions CSV (row,proba)")->required();
  predict->add_option("--manifest", manifest_flag, "Manifest path (default <out>.manifest.json)");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against observed outcomes");
  DataFlags eval_data;
  std::string eval_predictions, eval_out;
  eval_data.add_to(evaluate_cmd);
  evaluate_cmd->add_option("--predictions", eval_predictions, "Predictions CSV (row,proba)")->required();
  evaluate_cmd->add_option("--out", eval_out, "Metrics CSV (acc,auc,nll); stdout when omitted");
  evaluate_cmd->add_option("--manifest", manifest_flag, "Manifest path (default <out>.manifest.json)");

  // cv
  auto* cv = app.add_subcommand("cv", "Cross-validate a grid of presets and dimensions");
  DataFlags cv_data;
  TrainFlags cv_flags;
  std::vector<std::string> cv_presets, cv_grid;
  std::vector<std::size_t> cv_dims;
  std::size_t cv_folds = 5;
  std::string cv_split = "row", cv_report = "cv_report.csv", cv_summary = "cv_summary.csv";
  bool cv_point = false;
  std::size_t cv_threads = std::max(1u, std::thread::hardware_concurrency());
  cv_data.add_to(cv);
  cv_flags.add_to(cv, false);
  cv->add_option("--preset", cv_presets, "Presets (repeat or comma-separate); crossed with --d");
  cv->add_option("--d", cv_dims, "Dimensions (repeatable); crossed with --preset");
  cv->add_option("--grid", cv_grid, "Explicit preset:d cells, e.g. irt:0,mirtb:5");
  cv->add_option("--folds", cv_folds, "Number of folds");
  cv->add_option("--split", cv_split, "Fold unit")->check(CLI::IsMember({"row", "student"}));
  cv->add_flag("--point-estimate", cv_point, "Gibbs: score with averaged parameters, not averaged predictions");
  cv->add_option("--threads", cv_threads, "Worker threads for folds");
  cv->add_option("--report", cv_report, "Per-fold CSV (preset,d,fold,acc,auc,nll)");
  cv->add_option("--summary", cv_summary, "Summary CSV of fold means");
  cv->add_option("--manifest", manifest_flag, "Manifest path (default <summary>.manifest.json)");

  // export-embeddings
  auto* export_cmd = app.add_subcommand("export-embeddings", "Export biases and embeddings as CSV");
  std::string export_model, export_out;
  export_cmd->add_option("--model", export_model, "Model JSON")->required();
  export_cmd->add_option("--out", export_out, "Embedding CSV")->required();
  export_cmd->add_option("--manifest", manifest_flag, "Manifest path (default <out>.manifest.json)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic log with known parameters");
  SynthSpec spec;
  std::string synth_generator = "rasch", synth_link = "logit", synth_dir;
  synth->add_option("--generator", synth_generator, "rasch, mirt, pfa or ktm")
      ->check(CLI::IsMember({"rasch", "mirt", "pfa", "ktm"}));
  synth->add_option("--n", spec.students, "Students");
  synth->add_option("--m", spec.items, "Items");
  synth->add_option("--s", spec.skills, "Skills");
  synth->add_option("--d", spec.dim, "Embedding dimension (mirt, ktm)");
  synth->add_option("--attempts", spec.attempts, "Attempts per student and item");
  synth->add_option("--link", synth_link, "Link")->check(CLI::IsMember({"logit", "probit"}));
  synth->add_option("--seed", spec.seed, "Random seed");
  synth->add_option("--sigma", spec.sigma, "Scale of the true parameters");
  synth->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth->add_option("--manifest", manifest_flag, "Manifest path (default <out-dir>/manifest.json)");

  std::vector<std::string> argv_storage{"ktm"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*encode) {
      Manifest manifest(encode, 0);
      const LoadedData loaded = load_data(encode_data, nullptr);
      Preset preset = preset_encoding(encode_preset);
      const DesignMatrix design = encode_with(loaded, preset.config);
      std::ostringstream text;
      write_design_matrix(text, design);
      write_file(encode_out, text.str());
      if (!encode_vocab_out.empty()) write_file(encode_vocab_out, loaded.vocab.to_json().dump(1) + "\n");
      manifest.write(manifest_path(encode_out, manifest_flag), encode_data.input_paths());
      err << "encoded " << design.size() << " rows over " << design.width() << " features\n";
    } else if (*train) {
      const TrainConfig config = train_flags.resolved();
      Manifest manifest(train, config.seed);
      const LoadedData loaded = load_data(train_data, nullptr);
      Preset preset = preset_encoding(train_flags.preset);
      check_dim(preset, config.dim);
      const DesignMatrix design = encode_with(loaded, preset.config);

      std::optional<DesignMatrix> test;
      if (!train_test.empty()) {
        DataFlags test_flags = train_data;
        test_flags.data = train_test;
        const LoadedData test_loaded = load_data(test_flags, &loaded.vocab);
        EncodingConfig cfg = preset.config;
        test = encode_with(test_loaded, cfg);
      }
      std::ofstream log_file;
      EpochCallback on_epoch;
      if (!train_log.empty()) {
        log_file.open(train_log);
        if (!log_file) throw std::runtime_error("cannot write " + train_log);
        log_file << "epoch,train_nll" << (test ? ",test_acc,test_auc,test_nll" : "") << '\n';
        on_epoch = [&](const EpochStats& s) { write_train_log_line(log_file, s, test.has_value()); };
      }

      Model model{preset.name, preset.config, design.space(), parse_link(train_flags.link), {}, loaded.vocab};
      const DesignMatrix* test_ptr = test ? &*test : nullptr;
      if (model.link == Link::logit) {
        model.params = train_map_logit(design, config, test_ptr, on_epoch);
      } else {
        model.params = train_gibbs_probit(design, test_ptr, config, {}, on_epoch).params;
      }
      save_model(train_out, model);
      auto inputs = train_data.input_paths();
      if (!train_test.empty()) inputs.push_back(train_test);
      manifest.write(manifest_path(train_out, manifest_flag), inputs);
    } else if (*predict) {
      Manifest manifest(predict, 0);
      const Model model = load_model(predict_model);
      const LoadedData loaded = load_data(predict_data, &model.vocab);
      EncodingConfig cfg = model.encoding;
      const DesignMatrix design = encode_with(loaded, cfg);
      if (!(design.space() == model.space))
        throw std::runtime_error("encoded feature space differs from the model's (wrong q-matrix?)");
      std::ostringstream text;
      text << "row,proba\n";
      for (std::size_t i = 0; i < design.size(); ++i)
        text << i << ',' << format_double(predict_proba(model.params, design.row(i), model.link)) << '\n';
      write_file(predict_out, text.str());
      auto inputs = predict_data.input_paths();
      inputs.push_back(predict_model);
      manifest.write(manifest_path(predict_out, manifest_flag), inputs);
    } else if (*evaluate_cmd) {
      Manifest manifest(evaluate_cmd, 0);
      const LoadedData loaded = load_data(eval_data, nullptr);
      std::ifstream in(eval_predictions);
      if (!in) throw std::runtime_error("cannot open " + eval_predictions);
      CsvReader reader(in);
      std::vector<std::string> fields;
      if (!reader.next(fields) || fields.size() != 2 || fields[0] != "row" || fields[1] != "proba")
        throw std::runtime_error("predictions CSV must have header row,proba");
      std::vector<double> predictions(loaded.dataset.triplets.size(), -1.0);
      while (reader.next(fields)) {
        if (fields.size() != 2) throw std::runtime_error("predictions CSV: ragged line " + std::to_string(reader.line()));
        const auto row = parse_integer<std::size_t>(fields[0]);
        if (row >= predictions.size()) throw std::runtime_error("predictions CSV: row " + fields[0] + " out of range");
        predictions[row] = parse_double(fields[1]);
      }
      if (std::find(predictions.begin(), predictions.end(), -1.0) != predictions.end())
        throw std::runtime_error("predictions CSV does not cover every row of the data");
      std::vector<int> labels;
      for (const auto& t : loaded.dataset.triplets) labels.push_back(t.outcome);
      const Metrics m = evaluate(predictions, labels);
      std::ostringstream text;
      text << "acc,auc,nll\n"
           << format_double(m.acc) << ',' << (m.auc ? format_double(*m.auc) : "NA") << ',' << format_double(m.nll)
           << '\n';
      if (eval_out.empty()) {
        out << text.str();
      } else {
        write_file(eval_out, text.str());
        auto inputs = eval_data.input_paths();
        inputs.push_back(eval_predictions);
        manifest.write(manifest_path(eval_out, manifest_flag), inputs);
      }
    } else if (*cv) {
      const TrainConfig config = cv_flags.resolved();
      Manifest manifest(cv, config.seed);
      std::vector<GridCell> grid;
      for (const auto& cell : split_list(cv_grid)) {
        const auto colon = cell.rfind(':');
        if (colon == std::string::npos) throw std::invalid_argument("grid cell '" + cell + "' is not preset:d");
        grid.push_back({cell.substr(0, colon), parse_integer<std::size_t>(cell.substr(colon + 1))});
      }
      const auto presets = split_list(cv_presets);
      const std::vector<std::size_t> dims = cv_dims.empty() ? std::vector<std::size_t>{0} : cv_dims;
      for (const auto& p : presets) {
        const Preset preset = preset_encoding(p);
        for (std::size_t d : dims) {
          // The cross product may pair a fixed-d preset with other dimensions; those cells are skipped.
          if ((preset.dim_rule == DimRule::zero && d != 0) || (preset.dim_rule == DimRule::positive && d == 0)) {
            err << "skipping " << preset.name << " with d = " << d << '\n';
            continue;
          }
          grid.push_back({p, d});
        }
      }
      if (grid.empty())
        throw std::invalid_argument(presets.empty() ? "cv needs --preset or --grid"
                                                                      : "no preset accepts the requested --d values");

      const LoadedData loaded = load_data(cv_data, nullptr);
      CVOptions options;
      options.folds = {cv_folds, config.seed, parse_split_mode(cv_split)};
      options.train = config;
      options.link = parse_link(cv_flags.link);
      options.averaged_predictions = !cv_point;
      options.threads = cv_threads;
      const auto reports = run_cv(loaded.dataset, grid, options);

      std::ostringstream folds_text, summary_text;
      write_fold_csv(folds_text, reports);
      write_summary_csv(summary_text, reports);
      write_file(cv_report, folds_text.str());
      write_file(cv_summary, summary_text.str());
      print_table(out, reports);
      manifest.write(manifest_path(cv_summary, manifest_flag), cv_data.input_paths());
    } else if (*export_cmd) {
      Manifest manifest(export_cmd, 0);
      const Model model = load_model(export_model);
      std::ostringstream text;
      write_embeddings_csv(text, export_embeddings(model.params, model.space), model.params.dim);
      write_file(export_out, text.str());
      manifest.write(manifest_path(export_out, manifest_flag), {export_model});
    } else if (*synth) {
      spec.generator = parse_generator(synth_generator);
      spec.link = parse_link(synth_link);
      Manifest manifest(synth, spec.seed);
      const SynthData data = generate_synthetic(spec);
      write_synthetic(data, synth_dir);
      manifest.write(manifest_flag.empty() ? (std::filesystem::path(synth_dir) / "manifest.json").string()
                                           : manifest_flag,
                     {});
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ktm
