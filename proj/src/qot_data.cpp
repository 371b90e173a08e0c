#include "fedqot/qot_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedqot/log.hpp"
#include "fedqot/rng.hpp"

namespace fedqot {

namespace {

constexpr double kSigmaAse = 0.05;
constexpr double kEtaNl = 0.01;
constexpr int kMaxSpans = 30;
constexpr int kMaxChannels = 96;
constexpr int kMaxDomains = 3;
constexpr double kMinLaunchDbm = -4.0;
constexpr double kMaxLaunchDbm = 4.0;

double snr_threshold_db(Modulation m) {
  switch (m) {
    case Modulation::kQpsk: return 7.0;
    case Modulation::kQam8: return 10.5;
    case Modulation::kQam16: return 13.5;
  }
  throw ValidationError("unknown modulation");
}

}  // namespace

const char* modulation_name(Modulation m) {
  switch (m) {
    case Modulation::kQpsk: return "QPSK";
    case Modulation::kQam8: return "QAM8";
    case Modulation::kQam16: return "QAM16";
  }
  throw ValidationError("unknown modulation");
}

Modulation modulation_from_name(const std::string& name) {
  if (name == "QPSK") return Modulation::kQpsk;
  if (name == "QAM8") return Modulation::kQam8;
  if (name == "QAM16") return Modulation::kQam16;
  throw ValidationError("unknown modulation '" + name + "'");
}

void LightpathSample::validate() const {
  if (n_spans < 1 || n_spans > kMaxSpans) {
    throw ValidationError("n_spans out of range 1..30");
  }
  if (!(launch_power_dbm >= kMinLaunchDbm && launch_power_dbm <= kMaxLaunchDbm)) {
    throw ValidationError("launch_power_dbm out of range [-4, +4]");
  }
  if (channel_load < 1 || channel_load > kMaxChannels) {
    throw ValidationError("channel_load out of range 1..96");
  }
  if (modulation != Modulation::kQpsk && modulation != Modulation::kQam8 &&
      modulation != Modulation::kQam16) {
    throw ValidationError("unknown modulation");
  }
  if (domain_id < 0 || domain_id >= kMaxDomains) {
    throw ValidationError("domain_id out of range 0..2");
  }
}

int32_t label_qot(const LightpathSample& s) {
  s.validate();
  const double p_mw = std::pow(10.0, s.launch_power_dbm / 10.0);
  const double noise =
      double(s.n_spans) *
      (kSigmaAse +
       kEtaNl * p_mw * p_mw * p_mw * (1.0 + 0.5 * double(s.channel_load) / 96.0));
  const double snr_db = 10.0 * std::log10(p_mw / noise);
  return snr_db >= snr_threshold_db(s.modulation) ? 1 : 0;
}

size_t FeatureSchema::encoded_width() const {
  size_t w = 0;
  for (const auto& f : fields) {
    w += f.kind == FieldDesc::Kind::kNumeric ? 1 : f.categories.size();
  }
  return w;
}

size_t FeatureSchema::numeric_field_count() const {
  size_t n = 0;
  for (const auto& f : fields) {
    if (f.kind == FieldDesc::Kind::kNumeric) ++n;
  }
  return n;
}

std::string FeatureSchema::canonical_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : fields) {
    nlohmann::json jf;
    jf["name"] = f.name;
    if (f.kind == FieldDesc::Kind::kNumeric) {
      jf["kind"] = "numeric";
    } else {
      jf["kind"] = "one_hot";
      jf["categories"] = f.categories;
    }
    arr.push_back(jf);
  }
  nlohmann::json root;
  root["fields"] = arr;
  return root.dump();  // object keys sorted, no whitespace
}

uint64_t fnv1a64(const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t FeatureSchema::hash() const {
  const std::string j = canonical_json();
  return fnv1a64(j.data(), j.size());
}

FeatureSchema default_schema() {
  FeatureSchema s;
  s.fields.push_back({"n_spans", FieldDesc::Kind::kNumeric, {}});
  s.fields.push_back({"launch_power_dbm", FieldDesc::Kind::kNumeric, {}});
  s.fields.push_back({"channel_load", FieldDesc::Kind::kNumeric, {}});
  s.fields.push_back(
      {"modulation", FieldDesc::Kind::kOneHot, {"QPSK", "QAM8", "QAM16"}});
  s.fields.push_back({"domain_id", FieldDesc::Kind::kOneHot, {"0", "1", "2"}});
  return s;
}

FeatureSchema schema_from_json(const std::string& json_text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("schema json: ") + e.what());
  }
  if (!root.contains("fields") || !root["fields"].is_array()) {
    throw FormatError("schema json: missing 'fields' array");
  }
  FeatureSchema s;
  for (const auto& jf : root["fields"]) {
    FieldDesc f;
    f.name = jf.at("name").get<std::string>();
    const std::string kind = jf.at("kind").get<std::string>();
    if (kind == "numeric") {
      f.kind = FieldDesc::Kind::kNumeric;
    } else if (kind == "one_hot") {
      f.kind = FieldDesc::Kind::kOneHot;
      f.categories = jf.at("categories").get<std::vector<std::string>>();
    } else {
      throw FormatError("schema json: unknown field kind '" + kind + "'");
    }
    s.fields.push_back(std::move(f));
  }
  return s;
}

namespace {

// Raw (pre-normalization) value of each schema field for a sample.
double numeric_value(const LightpathSample& s, const std::string& field) {
  if (field == "n_spans") return double(s.n_spans);
  if (field == "launch_power_dbm") return s.launch_power_dbm;
  if (field == "channel_load") return double(s.channel_load);
  throw SchemaError("unknown numeric field '" + field + "'");
}

std::string categorical_value(const LightpathSample& s,
                              const std::string& field) {
  if (field == "modulation") return modulation_name(s.modulation);
  if (field == "domain_id") return std::to_string(s.domain_id);
  throw SchemaError("unknown categorical field '" + field + "'");
}

}  // namespace

NormStats compute_stats(const std::vector<LabeledSample>& samples,
                        const FeatureSchema& schema) {
  NormStats st;
  for (const auto& f : schema.fields) {
    if (f.kind != FieldDesc::Kind::kNumeric) continue;
    double mean = 0.0;
    for (const auto& ls : samples) mean += numeric_value(ls.sample, f.name);
    mean /= double(samples.size());
    double var = 0.0;
    for (const auto& ls : samples) {
      const double d = numeric_value(ls.sample, f.name) - mean;
      var += d * d;
    }
    var /= double(samples.size());
    st.mean.push_back(mean);
    st.stddev.push_back(std::sqrt(var));
  }
  return st;
}

Dataset encode_and_normalize(const std::vector<LabeledSample>& samples,
                             const FeatureSchema& schema,
                             const NormStats* stats) {
  if (samples.empty()) throw UsageError("cannot encode an empty sample list");
  NormStats st = stats ? *stats : compute_stats(samples, schema);
  if (st.mean.size() != schema.numeric_field_count() ||
      st.stddev.size() != schema.numeric_field_count()) {
    throw SchemaError("normalization stats do not match the schema");
  }

  Dataset ds;
  ds.schema = schema;
  ds.stats = st;
  ds.features = Matrix(samples.size(), schema.encoded_width());
  ds.labels.reserve(samples.size());
  ds.domain_tags.reserve(samples.size());

  bool warned_zero_var = false;
  for (size_t r = 0; r < samples.size(); ++r) {
    const auto& ls = samples[r];
    double* row = ds.features.row(r);
    size_t col = 0, num_idx = 0;
    for (const auto& f : schema.fields) {
      if (f.kind == FieldDesc::Kind::kNumeric) {
        const double raw = numeric_value(ls.sample, f.name);
        const double sd = st.stddev[num_idx];
        if (sd == 0.0) {
          if (!warned_zero_var) {
            log_warn("zero-variance numeric field '" + f.name +
                     "' encoded as 0");
            warned_zero_var = true;
          }
          row[col++] = 0.0;
        } else {
          row[col++] = (raw - st.mean[num_idx]) / sd;
        }
        ++num_idx;
      } else {
        const std::string cat = categorical_value(ls.sample, f.name);
        const auto it =
            std::find(f.categories.begin(), f.categories.end(), cat);
        if (it == f.categories.end()) {
          throw SchemaError("unknown category '" + cat + "' for field '" +
                            f.name + "'");
        }
        row[col + size_t(it - f.categories.begin())] = 1.0;
        col += f.categories.size();
      }
    }
    ds.labels.push_back(ls.label);
    ds.domain_tags.push_back(ls.sample.domain_id);
  }
  return ds;
}

std::vector<std::vector<LabeledSample>> generate_synthetic_samples(
    size_t n_samples, int n_domains, uint64_t seed) {
  if (n_domains < 1 || n_domains > kMaxDomains) {
    throw UsageError("n_domains must be between 1 and 3");
  }
  if (n_samples < size_t(n_domains)) {
    throw UsageError("n_samples must be at least n_domains");
  }

  // Base modulation mix, rotated by domain index to emulate vendor
  // heterogeneity.
  const double base[3] = {0.5, 0.3, 0.2};

  std::vector<std::vector<LabeledSample>> domains(n_domains);
  for (int d = 0; d < n_domains; ++d) {
    const size_t n_d =
        n_samples / n_domains + (size_t(d) < n_samples % n_domains ? 1 : 0);
    SplitMix64 rng(seed ^ uint64_t(d));
    const double p0 = base[d % 3];
    const double p1 = base[(1 + d) % 3];

    // Class quotas: 50/50, extra sample (odd n_d) goes to class 0.
    size_t quota[2] = {n_d - n_d / 2, n_d / 2};
    auto& out = domains[d];
    out.reserve(n_d);
    const size_t max_draws = 100 * n_d;
    size_t draws = 0;
    while (out.size() < n_d) {
      if (++draws > max_draws) {
        throw GenerationError(
            "class balance unreachable within 100x draws for domain " +
            std::to_string(d));
      }
      LightpathSample s;
      s.n_spans = 1 + int(rng.next_below(30));
      s.launch_power_dbm = kMinLaunchDbm + 8.0 * rng.next_double();
      s.channel_load = 1 + int(rng.next_below(96));
      const double r = rng.next_double();
      s.modulation = r < p0 ? Modulation::kQpsk
                            : (r < p0 + p1 ? Modulation::kQam8
                                           : Modulation::kQam16);
      s.domain_id = d;
      const int32_t label = label_qot(s);
      if (quota[label] == 0) continue;
      --quota[label];
      out.push_back({s, label});
    }
  }
  return domains;
}

std::vector<Dataset> generate_synthetic(size_t n_samples, int n_domains,
                                        uint64_t seed) {
  const auto domains = generate_synthetic_samples(n_samples, n_domains, seed);
  std::vector<LabeledSample> pooled;
  pooled.reserve(n_samples);
  for (const auto& d : domains) pooled.insert(pooled.end(), d.begin(), d.end());
  const FeatureSchema schema = default_schema();
  const NormStats stats = compute_stats(pooled, schema);
  std::vector<Dataset> out;
  out.reserve(domains.size());
  for (const auto& d : domains) {
    out.push_back(encode_and_normalize(d, schema, &stats));
  }
  return out;
}

namespace {

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void row_error(size_t row, const std::string& field,
                            const std::string& what) {
  throw IngestionError("row " + std::to_string(row) + ", field '" + field +
                       "': " + what);
}

long parse_int_cell(const std::string& cell, size_t row,
                    const std::string& field) {
  size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(cell, &pos);
  } catch (const std::exception&) {
    row_error(row, field, "unparseable integer '" + cell + "'");
  }
  if (pos != cell.size()) {
    row_error(row, field, "unparseable integer '" + cell + "'");
  }
  return v;
}

double parse_real_cell(const std::string& cell, size_t row,
                       const std::string& field) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    row_error(row, field, "unparseable real '" + cell + "'");
  }
  if (pos != cell.size()) {
    row_error(row, field, "unparseable real '" + cell + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

void save_csv(const std::vector<LabeledSample>& samples,
              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "n_spans,launch_power_dbm,channel_load,modulation,domain_id,label\n";
  for (const auto& ls : samples) {
    out << ls.sample.n_spans << ',' << format_real(ls.sample.launch_power_dbm)
        << ',' << ls.sample.channel_load << ','
        << modulation_name(ls.sample.modulation) << ',' << ls.sample.domain_id
        << ',' << ls.label << '\n';
  }
  if (!out.good()) throw IoError("write to '" + path + "' failed");
}

std::vector<LabeledSample> load_csv(const std::string& path,
                                    const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  std::string expected_header;
  for (const auto& f : schema.fields) {
    expected_header += f.name;
    expected_header += ',';
  }
  expected_header += "label";

  std::string line;
  if (!std::getline(in, line)) {
    throw IngestionError("'" + path + "' is empty (missing header)");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header) {
    throw IngestionError("'" + path + "' header does not match schema: got '" +
                         line + "', expected '" + expected_header + "'");
  }

  std::vector<LabeledSample> samples;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6) {
      throw IngestionError("row " + std::to_string(row) + ": expected 6 cells, got " +
                           std::to_string(cells.size()));
    }
    LabeledSample ls;
    ls.sample.n_spans = int(parse_int_cell(cells[0], row, "n_spans"));
    ls.sample.launch_power_dbm = parse_real_cell(cells[1], row, "launch_power_dbm");
    ls.sample.channel_load = int(parse_int_cell(cells[2], row, "channel_load"));
    try {
      ls.sample.modulation = modulation_from_name(cells[3]);
    } catch (const ValidationError& e) {
      row_error(row, "modulation", e.what());
    }
    ls.sample.domain_id = int(parse_int_cell(cells[4], row, "domain_id"));
    const long label = parse_int_cell(cells[5], row, "label");
    if (label != 0 && label != 1) row_error(row, "label", "must be 0 or 1");
    ls.label = int32_t(label);
    try {
      ls.sample.validate();
    } catch (const ValidationError& e) {
      throw IngestionError("row " + std::to_string(row) + ": " + e.what());
    }
    samples.push_back(ls);
  }
  return samples;
}

namespace {

// Shared stratified-split skeleton: returns (train_indices, test_indices)
// over items with the given labels.
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(
    const std::vector<int32_t>& labels, double test_fraction, uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw UsageError("test_fraction must be in (0, 1)");
  }
  std::vector<size_t> train, test;
  for (int32_t cls = 0; cls <= 1; ++cls) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    if (idx.empty()) continue;
    SplitMix64 rng(seed ^ uint64_t(cls));
    fisher_yates_shuffle(idx, rng);
    const size_t n_test = size_t(std::floor(test_fraction * double(idx.size()) + 0.5));
    for (size_t i = 0; i < idx.size(); ++i) {
      (i < n_test ? test : train).push_back(idx[i]);
    }
  }
  if (train.empty() || test.empty()) {
    throw UsageError("dataset too small to stratify at this test_fraction");
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

}  // namespace

std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>>
train_test_split(const std::vector<LabeledSample>& samples,
                 double test_fraction, uint64_t seed) {
  std::vector<int32_t> labels;
  labels.reserve(samples.size());
  for (const auto& ls : samples) labels.push_back(ls.label);
  auto [train_idx, test_idx] = split_indices(labels, test_fraction, seed);
  std::vector<LabeledSample> train, test;
  train.reserve(train_idx.size());
  test.reserve(test_idx.size());
  for (size_t i : train_idx) train.push_back(samples[i]);
  for (size_t i : test_idx) test.push_back(samples[i]);
  return {train, test};
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset,
                                             double test_fraction,
                                             uint64_t seed) {
  auto [train_idx, test_idx] =
      split_indices(dataset.labels, test_fraction, seed);
  auto take = [&](const std::vector<size_t>& idx) {
    Dataset out;
    out.schema = dataset.schema;
    out.stats = dataset.stats;
    out.features = Matrix(idx.size(), dataset.features.cols);
    out.labels.reserve(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* src = dataset.features.row(idx[r]);
      std::copy(src, src + dataset.features.cols, out.features.row(r));
      out.labels.push_back(dataset.labels[idx[r]]);
      if (!dataset.domain_tags.empty()) {
        out.domain_tags.push_back(dataset.domain_tags[idx[r]]);
      }
    }
    return out;
  };
  return {take(train_idx), take(test_idx)};
}

}  // namespace fedqot
