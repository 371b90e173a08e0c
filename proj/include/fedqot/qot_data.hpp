#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedqot/nn.hpp"

namespace fedqot {

enum class Modulation : int { kQpsk = 0, kQam8 = 1, kQam16 = 2 };

const char* modulation_name(Modulation m);
Modulation modulation_from_name(const std::string& name);

// One candidate lightpath. Spans are 80 km each.
struct LightpathSample {
  int n_spans = 1;                // 1..30
  double launch_power_dbm = 0.0;  // [-4, +4]
  int channel_load = 1;           // 1..96 co-propagating channels
  Modulation modulation = Modulation::kQpsk;
  int domain_id = 0;              // 0..2

  void validate() const;  // throws ValidationError naming the field
};

struct LabeledSample {
  LightpathSample sample;
  int32_t label = 0;  // 1 = QoT acceptable
};

// Feature schema: ordered field descriptors, each numeric or one-hot.
struct FieldDesc {
  enum class Kind { kNumeric, kOneHot };
  std::string name;
  Kind kind = Kind::kNumeric;
  std::vector<std::string> categories;  // one-hot only
};

struct FeatureSchema {
  std::vector<FieldDesc> fields;

  size_t encoded_width() const;
  size_t numeric_field_count() const;
  // Canonical JSON: sorted keys, no insignificant whitespace. The 64-bit
  // schema hash is FNV-1a over these bytes.
  std::string canonical_json() const;
  uint64_t hash() const;
};

uint64_t fnv1a64(const void* data, size_t len);

// n_spans, launch_power_dbm, channel_load numeric; modulation and domain_id
// one-hot (3 categories each) -> encoded width 9.
FeatureSchema default_schema();

FeatureSchema schema_from_json(const std::string& json_text);

// Per-numeric-field z-score statistics, in schema field order.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
};

// Encoded, normalized samples ready for training.
struct Dataset {
  FeatureSchema schema;
  Matrix features;              // rows x encoded_width, normalized
  std::vector<int32_t> labels;  // {0,1}
  std::vector<int32_t> domain_tags;
  NormStats stats;  // the stats the features were normalized with

  size_t size() const { return labels.size(); }
  Batch as_batch() const { return Batch{features, labels}; }
};

// Threshold label: linear launch power P = 10^(dbm/10) mW, proxy noise
// N = n_spans * (sigma_ase + eta_nl * P^3 * (1 + 0.5 * channel_load / 96))
// with sigma_ase = 0.05 and eta_nl = 0.01, SNR_dB = 10*log10(P/N). Label 1
// iff SNR_dB >= threshold(modulation): QPSK 7.0, QAM8 10.5, QAM16 13.5 dB.
int32_t label_qot(const LightpathSample& sample);

// Deterministic synthetic corpus: one sample list per domain, sizes differing
// by at most one, classes rejection-balanced to 50% per domain (odd counts
// give the extra sample to class 0). Domain k draws its modulation mix with
// base probabilities {0.5, 0.3, 0.2} rotated by k. Stream seed for domain k
// is seed XOR k.
std::vector<std::vector<LabeledSample>> generate_synthetic_samples(
    size_t n_samples, int n_domains, uint64_t seed);

// Sample-level generation plus encoding: every domain is normalized with
// pooled statistics over all generated samples so the domains share one
// feature space. Each returned Dataset carries those stats.
std::vector<Dataset> generate_synthetic(size_t n_samples, int n_domains,
                                        uint64_t seed);

NormStats compute_stats(const std::vector<LabeledSample>& samples,
                        const FeatureSchema& schema);

// One-hot expansion plus z-scoring of numeric fields. When stats is null the
// statistics are computed from these samples; a training set's stats must be
// reused for its test set. Zero-variance numeric fields encode as 0 with a
// warning.
Dataset encode_and_normalize(const std::vector<LabeledSample>& samples,
                             const FeatureSchema& schema,
                             const NormStats* stats = nullptr);

// CSV with header n_spans,launch_power_dbm,channel_load,modulation,domain_id,
// label. Reals carry 17 significant digits so a save/load round trip is
// value-exact.
std::vector<LabeledSample> load_csv(const std::string& path,
                                    const FeatureSchema& schema);
void save_csv(const std::vector<LabeledSample>& samples,
              const std::string& path);

// Deterministic stratified split; per-class test counts are round(fraction *
// class count), so the test share of each class is within one sample of the
// requested fraction.
std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset,
                                             double test_fraction,
                                             uint64_t seed);
std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>>
train_test_split(const std::vector<LabeledSample>& samples,
                 double test_fraction, uint64_t seed);

}  // namespace fedqot
