#include "placekd/losses.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "placekd/errors.h"

namespace placekd {

template <typename T>
T triplet_loss(std::span<const T> query, std::span<const T> positive, std::span<const T> negative,
               const TripletLossConfig& cfg, TripletGrads<T>* grads) {
  if (query.size() != positive.size() || query.size() != negative.size()) {
    throw LossError("triplet loss: descriptor dims differ (" + std::to_string(query.size()) + ", " +
                    std::to_string(positive.size()) + ", " + std::to_string(negative.size()) + ")");
  }
  const std::size_t n = query.size();
  T sp = 0, sn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sp += (query[i] - positive[i]) * (query[i] - positive[i]);
    sn += (query[i] - negative[i]) * (query[i] - negative[i]);
  }
  const T dp = std::sqrt(sp);
  const T dn = std::sqrt(sn);
  const T value = dp - dn + static_cast<T>(cfg.margin);
  if (grads) {
    grads->query.assign(n, T(0));
    grads->positive.assign(n, T(0));
    grads->negative.assign(n, T(0));
    if (value > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        const T up = dp > 0 ? (query[i] - positive[i]) / dp : T(0);
        const T un = dn > 0 ? (query[i] - negative[i]) / dn : T(0);
        grads->query[i] = up - un;
        grads->positive[i] = -up;
        grads->negative[i] = un;
      }
    }
  }
  return std::max(value, T(0));
}

template <typename T>
T kd_loss(std::span<const T> teacher, std::span<const T> student, const Transformation<T>& transform, double phi,
          ParamSet<T>* t_grads, std::vector<T>* grad_student) {
  if (static_cast<int>(teacher.size()) != transform.out_dim() ||
      static_cast<int>(student.size()) != transform.in_dim()) {
    throw LossError("kd loss: teacher dim " + std::to_string(teacher.size()) + ", student dim " +
                    std::to_string(student.size()) + " incompatible with T (" + std::to_string(transform.in_dim()) +
                    " -> " + std::to_string(transform.out_dim()) + ")");
  }
  if (phi < 0) throw LossError("kd loss: negative weight");
  const std::vector<T> mapped = transform.apply(student);
  T sq = 0;
  std::vector<T> grad_mapped(mapped.size());
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    const T diff = mapped[i] - teacher[i];
    sq += diff * diff;
    grad_mapped[i] = static_cast<T>(2.0 * phi) * diff;
  }
  if (t_grads || grad_student) {
    ParamSet<T> scratch;
    ParamSet<T>* target = t_grads;
    if (!target) {
      scratch = zeros_like(transform.params());
      target = &scratch;
    }
    std::vector<T> gx = transform.backward(student, grad_mapped, *target);
    if (grad_student) *grad_student = std::move(gx);
  }
  return static_cast<T>(phi) * sq;
}

WeightScheme WeightScheme::parse(const std::string& text, const PartitionConfig& partition) {
  WeightScheme s;
  s.partition = partition;
  if (text == "eq4") {
    s.kind = WeightKind::kEq4;
  } else if (text == "eq7" || text == "eq7_gps") {
    s.kind = WeightKind::kEq7Gps;
  } else if (text == "proto" || text == "prototype") {
    s.kind = WeightKind::kPrototype;
  } else if (text == "ones" || text == "all_ones") {
    s.kind = WeightKind::kAllOnes;
  } else if (text == "none") {
    s.kind = WeightKind::kNone;
  } else if (text.rfind("const:", 0) == 0) {
    s.kind = WeightKind::kConstants;
    std::istringstream in(text.substr(6));
    std::string field;
    std::size_t i = 0;
    while (std::getline(in, field, ',')) {
      if (i >= 4) throw ConfigError("weight scheme const: needs exactly 4 weights");
      try {
        s.constants[i++] = std::stod(field);
      } catch (const std::exception&) {
        throw ConfigError("weight scheme const: '" + field + "' is not a number");
      }
    }
    if (i != 4) throw ConfigError("weight scheme const: needs exactly 4 weights");
    for (double w : s.constants) {
      if (!(w >= 0)) throw ConfigError("weight scheme const: weights must be nonnegative");
    }
  } else {
    throw ConfigError("unknown weight scheme '" + text + "' (eq4|eq7|const:w1,w2,w3,w4|proto|ones|none)");
  }
  partition.validate();
  return s;
}

std::string WeightScheme::name() const {
  switch (kind) {
    case WeightKind::kEq4: return "eq4";
    case WeightKind::kEq7Gps: return "eq7";
    case WeightKind::kPrototype: return "proto";
    case WeightKind::kAllOnes: return "ones";
    case WeightKind::kNone: return "none";
    case WeightKind::kConstants: {
      std::ostringstream out;
      out << "const:" << constants[0] << ',' << constants[1] << ',' << constants[2] << ',' << constants[3];
      return out.str();
    }
  }
  return "?";
}

double weight_phi(int x, int y, const WeightScheme& scheme) {
  const PartitionConfig& cfg = scheme.partition;
  const Group g = assign_group(x, y, cfg);
  double phi = 0.0;
  switch (scheme.kind) {
    case WeightKind::kNone:
      return 0.0;
    case WeightKind::kAllOnes:
      phi = g == Group::kD4 ? 0.0 : 1.0;
      break;
    case WeightKind::kConstants:
      phi = scheme.constants[static_cast<int>(g) - 1];
      break;
    case WeightKind::kEq7Gps:
      phi = g == Group::kD4 ? 0.0 : 1.0 + 1.0 / (4.0 * std::log1p(static_cast<double>(x)));
      break;
    case WeightKind::kEq4:
    case WeightKind::kPrototype: {
      const double scale = scheme.kind == WeightKind::kEq4 ? std::log1p(static_cast<double>(x)) : x;
      switch (g) {
        case Group::kD1:
          phi = 1.0 + (std::min(cfg.n_m, y) - x) / (scheme.factors[0] * scale);
          break;
        case Group::kD2:
          phi = 1.0 + (y - x) / (scheme.factors[1] * scale);
          break;
        case Group::kD3:
          phi = 1.0 + (y - x) / (scheme.factors[2] * scale);
          break;
        case Group::kD4:
          phi = 0.0;
          break;
      }
      break;
    }
  }
  return std::max(phi, 0.0);
}

std::map<SamplePair, double> weight_table(const PartitionTable& table, const WeightScheme& scheme) {
  std::map<SamplePair, double> out;
  for (const auto& r : table.rows) out[r.pair] = weight_phi(r.x, r.y, scheme);
  return out;
}

template <typename T>
TotalLossParts<T> total_loss(const TripletDescriptors<T>& student, const TripletDescriptors<T>* teacher,
                             const Transformation<T>* transform, double phi, const TripletLossConfig& cfg,
                             TripletGrads<T>* student_grads, ParamSet<T>* t_grads) {
  TotalLossParts<T> parts;
  parts.vpr = triplet_loss<T>(student.query, student.positive, student.negative, cfg, student_grads);
  if (!transform || phi == 0.0) return parts;
  if (!teacher) throw LossError("total loss: KD term needs teacher descriptors");
  const std::vector<T>* s[3] = {&student.query, &student.positive, &student.negative};
  const std::vector<T>* t[3] = {&teacher->query, &teacher->positive, &teacher->negative};
  std::vector<T>* g[3] = {nullptr, nullptr, nullptr};
  if (student_grads) g[0] = &student_grads->query, g[1] = &student_grads->positive, g[2] = &student_grads->negative;
  for (int i = 0; i < 3; ++i) {
    std::vector<T> grad_s;
    parts.kd += kd_loss<T>(*t[i], *s[i], *transform, phi, t_grads, g[i] ? &grad_s : nullptr);
    if (g[i]) {
      for (std::size_t k = 0; k < grad_s.size(); ++k) (*g[i])[k] += grad_s[k];
    }
  }
  return parts;
}

template float triplet_loss<float>(std::span<const float>, std::span<const float>, std::span<const float>,
                                   const TripletLossConfig&, TripletGrads<float>*);
template double triplet_loss<double>(std::span<const double>, std::span<const double>, std::span<const double>,
                                     const TripletLossConfig&, TripletGrads<double>*);
template float kd_loss<float>(std::span<const float>, std::span<const float>, const Transformation<float>&, double,
                              ParamSet<float>*, std::vector<float>*);
template double kd_loss<double>(std::span<const double>, std::span<const double>, const Transformation<double>&,
                                double, ParamSet<double>*, std::vector<double>*);
template TotalLossParts<float> total_loss<float>(const TripletDescriptors<float>&, const TripletDescriptors<float>*,
                                                 const Transformation<float>*, double, const TripletLossConfig&,
                                                 TripletGrads<float>*, ParamSet<float>*);
template TotalLossParts<double> total_loss<double>(const TripletDescriptors<double>&,
                                                   const TripletDescriptors<double>*, const Transformation<double>*,
                                                   double, const TripletLossConfig&, TripletGrads<double>*,
                                                   ParamSet<double>*);

}  // namespace placekd
