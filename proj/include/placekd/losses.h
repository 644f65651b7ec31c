#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "placekd/model.h"
#include "placekd/partition.h"

namespace placekd {

struct TripletLossConfig {
  double margin = 0.1;
};

// Gradients w.r.t. the three descriptors of a triplet.
template <typename T>
struct TripletGrads {
  std::vector<T> query, positive, negative;
};

// max(d(q, p) - d(q, n) + m, 0) with d the Euclidean distance.
template <typename T>
T triplet_loss(std::span<const T> query, std::span<const T> positive, std::span<const T> negative,
               const TripletLossConfig& cfg, TripletGrads<T>* grads = nullptr);

// phi * ||teacher - T(student)||^2. When requested, accumulates dL/dT into
// t_grads and writes dL/d(student) into grad_student. The teacher gets no gradient.
template <typename T>
T kd_loss(std::span<const T> teacher, std::span<const T> student, const Transformation<T>& transform, double phi,
          ParamSet<T>* t_grads = nullptr, std::vector<T>* grad_student = nullptr);

enum class WeightKind { kEq4, kEq7Gps, kConstants, kPrototype, kAllOnes, kNone };

// Maps a pair's ranks (x: seg, y: rgb) to its distillation weight.
struct WeightScheme {
  WeightKind kind = WeightKind::kEq4;
  std::array<double, 4> constants{8.0, 4.0, 1.0, 0.0};  // per group D1..D4 for kConstants
  PartitionConfig partition;
  // Denominator factors of the D1/D2/D3 kernels (ablation knobs).
  std::array<double, 3> factors{4.0, 5.0, 4.0};

  // eq4 | eq7 | const:w1,w2,w3,w4 | proto | ones | none
  static WeightScheme parse(const std::string& text, const PartitionConfig& partition = {});
  std::string name() const;
};

// Never negative. Under eq7 the seg-branch rank x stands in for the
// single-branch ranking of the degenerate formula.
double weight_phi(int x, int y, const WeightScheme& scheme);

// Per-pair weights for a partition table.
std::map<SamplePair, double> weight_table(const PartitionTable& table, const WeightScheme& scheme);

// Student and teacher descriptors of one (q, p, n) triplet.
template <typename T>
struct TripletDescriptors {
  std::vector<T> query, positive, negative;
};

template <typename T>
struct TotalLossParts {
  T vpr = 0;
  T kd = 0;
  T total() const { return vpr + kd; }
};

// Triplet loss on the student descriptors plus phi-weighted KD terms for q, p
// and n. With transform == nullptr or phi == 0 the KD terms vanish and only
// the triplet loss remains. Gradients go to student descriptors and T.
template <typename T>
TotalLossParts<T> total_loss(const TripletDescriptors<T>& student, const TripletDescriptors<T>* teacher,
                             const Transformation<T>* transform, double phi, const TripletLossConfig& cfg,
                             TripletGrads<T>* student_grads = nullptr, ParamSet<T>* t_grads = nullptr);

}  // namespace placekd
