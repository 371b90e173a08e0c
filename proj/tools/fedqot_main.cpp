// fedqot: generate synthetic QoT data, train the shared model centrally or
// federated (in-process or over the wire), and compare the two scenarios.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedqot/fedavg.hpp"
#include "fedqot/log.hpp"
#include "fedqot/qot_data.hpp"
#include "fedqot/wire/ecn.hpp"
#include "fedqot/wire/tcn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedqot;

namespace {

// ---- JSON config files (flags override file values) ----

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool,
                        std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::FileError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      if (value.is_array()) {
        for (const auto& el : value) {
          item.inputs.push_back(el.is_string() ? el.get<std::string>()
                                               : el.dump());
        }
      } else {
        item.inputs.push_back(value.is_string() ? value.get<std::string>()
                                                : value.dump());
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

struct DataFlags {
  size_t n = 35216;
  int domains = 3;
  uint64_t seed = 42;
  double test_fraction = 0.2;
};

struct ModelFlags {
  std::vector<uint32_t> hidden = {3072};
  uint64_t init_seed = 7;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool with_split = true) {
  cmd->add_option("--n", f.n, "Total sample count")->capture_default_str();
  cmd->add_option("--domains", f.domains, "Number of network domains (1-3)")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Master data seed")->capture_default_str();
  if (with_split) {
    cmd->add_option("--test-fraction", f.test_fraction,
                    "Held-out fraction per domain")
        ->capture_default_str();
  }
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--hidden", f.hidden, "Hidden layer widths")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--init-seed", f.init_seed, "Weight initialization seed")
      ->capture_default_str();
}

void add_hp_flags(CLI::App* cmd, Hyperparams& hp) {
  cmd->add_option("--eta", hp.eta, "Learning rate")->capture_default_str();
  cmd->add_option("--local-epochs", hp.local_epochs,
                  "Local epochs per round (E)")
      ->capture_default_str();
  cmd->add_option("--batch-size", hp.batch_size, "Mini-batch size")
      ->capture_default_str();
  cmd->add_option("--rounds", hp.rounds, "Aggregation rounds")
      ->capture_default_str();
  cmd->add_option("--shuffle-seed", hp.shuffle_seed, "Batch shuffle seed")
      ->capture_default_str();
}

// Per-domain train/test split seed; shared by every command so the network
// path and the in-process path carve identical partitions.
uint64_t split_seed(uint64_t base_seed, int domain) {
  return base_seed ^ 0xC5EED5EEDULL ^ uint64_t(domain);
}

struct Prepared {
  std::vector<Dataset> trains;   // one per domain, pooled-stats encoding
  Dataset eval;                  // pooled held-out rows, same encoding
  FeatureSchema schema;
  NormStats stats;
};

Dataset encode_pooled_tests(
    const std::vector<std::vector<LabeledSample>>& tests,
    const FeatureSchema& schema, const NormStats& stats) {
  std::vector<LabeledSample> pooled;
  for (const auto& t : tests) pooled.insert(pooled.end(), t.begin(), t.end());
  return encode_and_normalize(pooled, schema, &stats);
}

Prepared prepare_generated(const DataFlags& f) {
  Prepared p;
  p.schema = default_schema();
  const auto domains = generate_synthetic_samples(f.n, f.domains, f.seed);
  std::vector<LabeledSample> all;
  for (const auto& d : domains) all.insert(all.end(), d.begin(), d.end());
  p.stats = compute_stats(all, p.schema);

  std::vector<std::vector<LabeledSample>> tests;
  for (int d = 0; d < f.domains; ++d) {
    auto [train, test] =
        train_test_split(domains[d], f.test_fraction, split_seed(f.seed, d));
    p.trains.push_back(encode_and_normalize(train, p.schema, &p.stats));
    tests.push_back(std::move(test));
  }
  p.eval = encode_pooled_tests(tests, p.schema, p.stats);
  return p;
}

Dataset pool_datasets(const std::vector<Dataset>& parts) {
  Dataset out;
  out.schema = parts[0].schema;
  out.stats = parts[0].stats;
  size_t rows = 0;
  for (const auto& p : parts) rows += p.size();
  out.features = Matrix(rows, parts[0].features.cols);
  size_t r = 0;
  for (const auto& p : parts) {
    for (size_t i = 0; i < p.size(); ++i, ++r) {
      const double* src = p.features.row(i);
      std::copy(src, src + p.features.cols, out.features.row(r));
      out.labels.push_back(p.labels[i]);
    }
  }
  return out;
}

// ---- schema.json: feature schema plus the shared normalization stats ----

void write_schema_file(const fs::path& path, const FeatureSchema& schema,
                       const NormStats& stats, const json& generator_info) {
  json root;
  root["schema"] = json::parse(schema.canonical_json());
  root["stats"]["mean"] = stats.mean;
  root["stats"]["stddev"] = stats.stddev;
  root["generator"] = generator_info;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << root.dump(2) << "\n";
}

std::pair<FeatureSchema, NormStats> read_schema_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("schema file: " + std::string(e.what()));
  }
  if (!root.contains("schema") || !root.contains("stats")) {
    throw FormatError("schema file needs 'schema' and 'stats'");
  }
  FeatureSchema schema = schema_from_json(root["schema"].dump());
  NormStats stats;
  stats.mean = root["stats"].at("mean").get<std::vector<double>>();
  stats.stddev = root["stats"].at("stddev").get<std::vector<double>>();
  return {schema, stats};
}

// ---- misc plumbing ----

void write_blob_file(const fs::path& path, const ParameterVector& params) {
  const std::vector<uint8_t> blob = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(blob.data()),
            std::streamsize(blob.size()));
}

ParameterVector read_blob_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::vector<uint8_t> blob((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  return deserialize_params(blob, peek_blob_spec(blob));
}

std::pair<std::string, uint16_t> parse_endpoint(const std::string& ep) {
  const size_t colon = ep.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == ep.size()) {
    throw UsageError("endpoint must be host:port, got '" + ep + "'");
  }
  const int port = std::stoi(ep.substr(colon + 1));
  if (port < 1 || port > 65535) throw UsageError("port out of range");
  return {ep.substr(0, colon), uint16_t(port)};
}

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

ModelSpec make_spec(const Prepared& p, const ModelFlags& mf) {
  ModelSpec spec;
  spec.input_dim = uint32_t(p.schema.encoded_width());
  spec.hidden_dims = mf.hidden;
  spec.output_dim = 2;
  return spec;
}

int domain_of(const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw UsageError("dataset is empty");
  const int d = samples.front().sample.domain_id;
  for (const auto& ls : samples) {
    if (ls.sample.domain_id != d) {
      throw UsageError("dataset mixes domain ids; one CSV per domain");
    }
  }
  return d;
}

// ---- subcommands ----

struct GenDataArgs {
  DataFlags data;
  std::string out = "data";
};

int cmd_gen_data(const GenDataArgs& a) {
  fs::create_directories(a.out);
  const auto domains =
      generate_synthetic_samples(a.data.n, a.data.domains, a.data.seed);
  const FeatureSchema schema = default_schema();
  std::vector<LabeledSample> all;
  for (const auto& d : domains) all.insert(all.end(), d.begin(), d.end());
  const NormStats stats = compute_stats(all, schema);

  for (int d = 0; d < a.data.domains; ++d) {
    const fs::path path = fs::path(a.out) / ("domain-" + std::to_string(d) + ".csv");
    save_csv(domains[d], path.string());
    size_t pos = 0;
    for (const auto& ls : domains[d]) pos += size_t(ls.label);
    std::cout << path.string() << ": " << domains[d].size() << " samples, "
              << pos << " positive\n";
  }
  write_schema_file(fs::path(a.out) / "schema.json", schema, stats,
                    json{{"n", a.data.n},
                         {"domains", a.data.domains},
                         {"seed", a.data.seed}});
  std::cout << (fs::path(a.out) / "schema.json").string()
            << ": schema hash " << std::hex << schema.hash() << std::dec << "\n";
  return 0;
}

struct TrainArgs {
  DataFlags data;
  ModelFlags model;
  Hyperparams hp;
  std::string out;
  double parity_tolerance_pp = 1.0;
};

int cmd_simulate(const TrainArgs& a) {
  Prepared p = prepare_generated(a.data);
  const ModelSpec spec = make_spec(p, a.model);
  const Dataset pooled = pool_datasets(p.trains);

  log_info("training centralized baseline (" + std::to_string(pooled.size()) +
           " samples)");
  const ParameterVector central =
      centralized_train(pooled, spec, a.hp, a.model.init_seed);
  const double acc_central = evaluate_accuracy(central, p.eval.as_batch());

  log_info("training federated (" + std::to_string(p.trains.size()) +
           " domains)");
  const TrainingResult fed =
      run_training(p.trains, spec, a.hp, a.model.init_seed, &p.eval);
  const double acc_dist =
      evaluate_accuracy(fed.final_params, p.eval.as_batch());

  const double gap_pp = std::abs(acc_dist - acc_central) * 100.0;
  const bool pass = gap_pp <= a.parity_tolerance_pp;

  fs::create_directories(a.out);
  char line[128];
  {
    std::ofstream csv(fs::path(a.out) / "report.csv");
    csv << "scenario,accuracy\n";
    std::snprintf(line, sizeof(line), "centralized,%.6f\n", acc_central);
    csv << line;
    std::snprintf(line, sizeof(line), "distributed,%.6f\n", acc_dist);
    csv << line;
  }
  {
    std::ofstream txt(fs::path(a.out) / "report.txt");
    txt << "# fedqot simulate report\n";
    txt << "# generated_at: " << utc_timestamp() << "\n";
    txt << "scenario,accuracy\n";
    std::snprintf(line, sizeof(line), "centralized,%.6f\n", acc_central);
    txt << line;
    std::snprintf(line, sizeof(line), "distributed,%.6f\n", acc_dist);
    txt << line;
    std::snprintf(line, sizeof(line),
                  "# parity_gap_pp=%.4f tolerance_pp=%.4f verdict=%s\n",
                  gap_pp, a.parity_tolerance_pp, pass ? "PASS" : "FAIL");
    txt << line;
  }
  write_history_csv(fed.history, (fs::path(a.out) / "history.csv").string());
  write_blob_file(fs::path(a.out) / "model_centralized.bin", central);
  write_blob_file(fs::path(a.out) / "model_distributed.bin", fed.final_params);

  std::printf("centralized,%.6f\n", acc_central);
  std::printf("distributed,%.6f\n", acc_dist);
  std::printf("parity gap %.4f pp (tolerance %.2f): %s\n", gap_pp,
              a.parity_tolerance_pp, pass ? "PASS" : "FAIL");
  return pass ? 0 : 3;
}

int cmd_centralized(const TrainArgs& a) {
  Prepared p = prepare_generated(a.data);
  const ModelSpec spec = make_spec(p, a.model);
  const Dataset pooled = pool_datasets(p.trains);
  const ParameterVector model =
      centralized_train(pooled, spec, a.hp, a.model.init_seed);
  const double acc = evaluate_accuracy(model, p.eval.as_batch());
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_blob_file(fs::path(a.out) / "model_centralized.bin", model);
  }
  std::printf("centralized,%.6f\n", acc);
  return 0;
}

struct TcnArgs {
  std::string listen = "127.0.0.1:7700";
  std::string data_dir = "data";
  uint32_t expected_ecns = 3;
  uint64_t min_samples = 100;
  uint32_t round_deadline_ms = 60000;
  DataFlags data;  // seed + test_fraction drive the split; n/domains unused
  ModelFlags model;
  Hyperparams hp;
  std::string out;
  std::string tls_cert, tls_key;
};

int cmd_tcn(const TcnArgs& a) {
  auto [schema, stats] = read_schema_file(
      (fs::path(a.data_dir) / "schema.json").string());

  // The coordinator's held-out evaluation set: the test split of every
  // domain CSV in the data directory. Training rows are never read into the
  // server's model path; they stay with the edge nodes.
  std::vector<std::vector<LabeledSample>> tests;
  for (int d = 0;; ++d) {
    const fs::path csv = fs::path(a.data_dir) / ("domain-" + std::to_string(d) + ".csv");
    if (!fs::exists(csv)) break;
    const auto samples = load_csv(csv.string(), schema);
    auto [train, test] =
        train_test_split(samples, a.data.test_fraction,
                         split_seed(a.data.seed, domain_of(samples)));
    tests.push_back(std::move(test));
  }
  if (tests.empty()) {
    throw UsageError("no domain-*.csv files under '" + a.data_dir + "'");
  }

  wire::TcnConfig cfg;
  cfg.model_spec.input_dim = uint32_t(schema.encoded_width());
  cfg.model_spec.hidden_dims = a.model.hidden;
  cfg.model_spec.output_dim = 2;
  cfg.hyperparams = a.hp;
  cfg.expected_ecns = a.expected_ecns;
  cfg.schema_hash = schema.hash();
  cfg.min_samples = a.min_samples;
  cfg.round_deadline = std::chrono::milliseconds(a.round_deadline_ms);
  cfg.init_seed = a.model.init_seed;
  cfg.eval_set = encode_pooled_tests(tests, schema, stats);

  auto [host, port] = parse_endpoint(a.listen);
  std::unique_ptr<wire::StreamAcceptor> acceptor;
  if (!a.tls_cert.empty() || !a.tls_key.empty()) {
    if (a.tls_cert.empty() || a.tls_key.empty()) {
      throw UsageError("TLS needs both --tls-cert and --tls-key");
    }
    acceptor = std::make_unique<wire::TlsAcceptor>(
        host, port, wire::TlsServerOptions{a.tls_cert, a.tls_key});
    log_info("tcn listening with TLS on " + a.listen);
  } else {
    acceptor = std::make_unique<wire::TcpAcceptor>(host, port);
    log_info("tcn listening on " + a.listen);
  }

  const wire::TcnOutcome outcome = wire::tcn_serve(cfg, *acceptor);
  if (!outcome.success) {
    log_warn("training failed: " + outcome.error);
    return 2;
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_blob_file(fs::path(a.out) / "model_distributed.bin",
                    outcome.final_params);
    write_history_csv(outcome.history,
                      (fs::path(a.out) / "history.csv").string());
  }
  std::printf("distributed,%.6f\n",
              outcome.final_accuracy ? *outcome.final_accuracy : -1.0);
  return 0;
}

struct EcnArgs {
  std::string connect = "127.0.0.1:7700";
  std::string data = "data/domain-0.csv";
  std::string schema = "data/schema.json";
  std::string ecn_id;
  DataFlags split;  // seed + test_fraction only
  std::string tls_ca;
};

int cmd_ecn(const EcnArgs& a) {
  auto [schema, stats] = read_schema_file(a.schema);
  const auto samples = load_csv(a.data, schema);
  const int domain = domain_of(samples);
  auto [train, test] = train_test_split(
      samples, a.split.test_fraction, split_seed(a.split.seed, domain));
  const Dataset local = encode_and_normalize(train, schema, &stats);

  wire::EcnConfig cfg;
  cfg.ecn_id = a.ecn_id.empty() ? "ecn-" + std::to_string(domain) : a.ecn_id;
  cfg.schema_hash = schema.hash();

  auto [host, port] = parse_endpoint(a.connect);
  wire::StreamFactory connect_fn;
  if (!a.tls_ca.empty()) {
    connect_fn = [host = host, port = port, ca = a.tls_ca] {
      return wire::tls_connect(host, port, wire::TlsClientOptions{ca});
    };
  } else {
    connect_fn = [host = host, port = port] {
      return wire::tcp_connect(host, port);
    };
  }

  log_info("'" + cfg.ecn_id + "' joining " + a.connect + " with " +
           std::to_string(local.size()) + " training samples");
  const wire::EcnResult r = wire::ecn_client(connect_fn, local, cfg);
  switch (r.status) {
    case wire::EcnResult::Status::kDone:
      std::printf("done,rounds=%u,final_accuracy=%.6f\n",
                  r.rounds_participated,
                  r.final_accuracy ? *r.final_accuracy : -1.0);
      return 0;
    case wire::EcnResult::Status::kRejected:
      std::printf("rejected,%s\n", r.detail.c_str());
      return 2;
    case wire::EcnResult::Status::kFailed:
      std::printf("failed,%s\n", r.detail.c_str());
      return 2;
  }
  return 2;
}

struct EvaluateArgs {
  std::string model;
  std::string data;
  std::string schema = "data/schema.json";
};

int cmd_evaluate(const EvaluateArgs& a) {
  auto [schema, stats] = read_schema_file(a.schema);
  const ParameterVector model = read_blob_file(a.model);
  const auto samples = load_csv(a.data, schema);
  const Dataset ds = encode_and_normalize(samples, schema, &stats);
  std::printf("accuracy,%.6f\n", evaluate_accuracy(model, ds.as_batch()));
  return 0;
}

void attach_config(CLI::App* cmd) {
  cmd->config_formatter(std::make_shared<JsonConfig>());
  cmd->set_config("--config", "", "JSON config file; flags override it");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated QoT-estimation trainer"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "Write per-domain CSVs and schema.json");
  add_data_flags(gen, gen_args.data, /*with_split=*/false);
  gen->add_option("--out", gen_args.out, "Output directory")->capture_default_str();
  attach_config(gen);

  TrainArgs sim_args;
  sim_args.out = "runs/simulate";
  CLI::App* sim = app.add_subcommand(
      "simulate", "Run centralized and federated on the same data and compare");
  add_data_flags(sim, sim_args.data);
  add_model_flags(sim, sim_args.model);
  add_hp_flags(sim, sim_args.hp);
  sim->add_option("--parity-tolerance", sim_args.parity_tolerance_pp,
                  "Max |acc_dist - acc_central| in percentage points")
      ->capture_default_str();
  sim->add_option("--out", sim_args.out, "Report directory")->capture_default_str();
  attach_config(sim);

  TrainArgs cen_args;
  CLI::App* cen = app.add_subcommand("centralized", "Run the centralized baseline only");
  add_data_flags(cen, cen_args.data);
  add_model_flags(cen, cen_args.model);
  add_hp_flags(cen, cen_args.hp);
  cen->add_option("--out", cen_args.out, "Model output directory");
  attach_config(cen);

  TcnArgs tcn_args;
  CLI::App* tcn = app.add_subcommand("tcn", "Serve as the training coordinator node");
  tcn->add_option("--listen", tcn_args.listen, "host:port")->capture_default_str();
  tcn->add_option("--data-dir", tcn_args.data_dir,
                  "Directory with domain-*.csv and schema.json")
      ->capture_default_str();
  tcn->add_option("--expected-ecns", tcn_args.expected_ecns,
                  "Eligible edge nodes required to start (K)")
      ->capture_default_str();
  tcn->add_option("--min-samples", tcn_args.min_samples,
                  "Eligibility floor on reported samples")
      ->capture_default_str();
  tcn->add_option("--round-deadline-ms", tcn_args.round_deadline_ms,
                  "Per-round straggler deadline")
      ->capture_default_str();
  tcn->add_option("--seed", tcn_args.data.seed, "Split seed (must match ECNs)")
      ->capture_default_str();
  tcn->add_option("--test-fraction", tcn_args.data.test_fraction,
                  "Held-out fraction per domain (must match ECNs)")
      ->capture_default_str();
  add_model_flags(tcn, tcn_args.model);
  add_hp_flags(tcn, tcn_args.hp);
  tcn->add_option("--out", tcn_args.out, "Model/history output directory");
  tcn->add_option("--tls-cert", tcn_args.tls_cert, "TLS certificate (PEM)");
  tcn->add_option("--tls-key", tcn_args.tls_key, "TLS private key (PEM)");
  attach_config(tcn);

  EcnArgs ecn_args;
  CLI::App* ecn = app.add_subcommand("ecn", "Serve as an edge contributor node");
  ecn->add_option("--connect", ecn_args.connect, "Coordinator host:port")
      ->capture_default_str();
  ecn->add_option("--data", ecn_args.data, "This domain's CSV")->capture_default_str();
  ecn->add_option("--schema", ecn_args.schema, "schema.json path")->capture_default_str();
  ecn->add_option("--ecn-id", ecn_args.ecn_id, "Node id (default ecn-<domain>)");
  ecn->add_option("--seed", ecn_args.split.seed, "Split seed (must match TCN)")
      ->capture_default_str();
  ecn->add_option("--test-fraction", ecn_args.split.test_fraction,
                  "Held-out fraction (must match TCN)")
      ->capture_default_str();
  ecn->add_option("--tls-ca", ecn_args.tls_ca, "CA bundle enabling TLS");
  attach_config(ecn);

  EvaluateArgs eval_args;
  CLI::App* eval = app.add_subcommand("evaluate", "Accuracy of a saved model on a CSV");
  eval->add_option("--model", eval_args.model, "Parameter blob path")->required();
  eval->add_option("--data", eval_args.data, "CSV path")->required();
  eval->add_option("--schema", eval_args.schema, "schema.json path")
      ->capture_default_str();
  attach_config(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (cen->parsed()) return cmd_centralized(cen_args);
    if (tcn->parsed()) return cmd_tcn(tcn_args);
    if (ecn->parsed()) return cmd_ecn(ecn_args);
    if (eval->parsed()) return cmd_evaluate(eval_args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
