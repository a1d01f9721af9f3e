#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "stopline/model.hpp"

namespace stopline {

using json = nlohmann::json;

namespace io_detail {

inline std::vector<double> number_or_array(const json& j) {
  if (j.is_number())
    return {j.get<double>()};
  return j.get<std::vector<double>>();
}

inline json compact(const std::vector<double>& v) { return v.size() == 1 ? json(v[0]) : json(v); }

inline const json& field(const json& j, const char* key) {
  if (!j.contains(key))
    throw std::invalid_argument(std::string("model JSON: missing field '") + key + "'");
  return j.at(key);
}

} // namespace io_detail

inline json to_json(const VectorField& f) {
  return std::visit(overloaded{
                        [](const coef::Constant& c) { return json{{"kind", "constant"}, {"value", io_detail::compact(c.value)}}; },
                        [](const coef::Affine& a) {
                          return json{{"kind", "affine"}, {"offset", io_detail::compact(a.offset)}, {"slope", a.slope}};
                        },
                        [](const coef::Linear& l) { return json{{"kind", "linear"}, {"rate", l.rate}}; },
                    },
                    f);
}

inline VectorField vector_field_from_json(const json& j) {
  const auto kind = io_detail::field(j, "kind").get<std::string>();
  if (kind == "constant")
    return coef::Constant{io_detail::number_or_array(io_detail::field(j, "value"))};
  if (kind == "affine")
    return coef::Affine{io_detail::number_or_array(io_detail::field(j, "offset")),
                        io_detail::field(j, "slope").get<double>()};
  if (kind == "linear")
    return coef::Linear{io_detail::field(j, "rate").get<double>()};
  throw std::invalid_argument("model JSON: unknown coefficient kind '" + kind + "'");
}

inline json to_json(const Rate& r) {
  return std::visit(overloaded{
                        [](const coef::ConstantRate& c) { return json{{"kind", "constant"}, {"value", c.value}}; },
                        [](const coef::LogisticRate& l) {
                          return json{{"kind", "logistic"}, {"max", l.max}, {"center", l.center}, {"width", l.width}};
                        },
                    },
                    r);
}

inline Rate rate_from_json(const json& j) {
  if (j.is_number())
    return coef::ConstantRate{j.get<double>()};
  const auto kind = io_detail::field(j, "kind").get<std::string>();
  if (kind == "constant")
    return coef::ConstantRate{io_detail::field(j, "value").get<double>()};
  if (kind == "logistic")
    return coef::LogisticRate{io_detail::field(j, "max").get<double>(), io_detail::field(j, "center").get<double>(),
                              io_detail::field(j, "width").get<double>()};
  throw std::invalid_argument("model JSON: unknown rate kind '" + kind + "'");
}

inline json to_json(const Offspring& o) {
  return std::visit(overloaded{
                        [](const coef::Deterministic& d) { return json{{"kind", "deterministic"}, {"k", d.k}}; },
                        [](const coef::Binary& b) { return json{{"kind", "binary"}, {"p0", b.p0}, {"p2", b.p2}}; },
                        [](const coef::Poisson& p) { return json{{"kind", "poisson"}, {"lambda", to_json(p.lambda)}}; },
                    },
                    o);
}

inline Offspring offspring_from_json(const json& j) {
  const auto kind = io_detail::field(j, "kind").get<std::string>();
  if (kind == "deterministic")
    return coef::Deterministic{io_detail::field(j, "k").get<unsigned>()};
  if (kind == "binary")
    return coef::Binary{io_detail::field(j, "p0").get<double>(), io_detail::field(j, "p2").get<double>()};
  if (kind == "poisson")
    return coef::Poisson{rate_from_json(io_detail::field(j, "lambda"))};
  throw std::invalid_argument("model JSON: unknown offspring kind '" + kind + "'");
}

inline json to_json(const RewardFn& g) {
  return std::visit(overloaded{
                        [](const coef::ConstantReward& c) { return json{{"kind", "constant"}, {"value", c.value}}; },
                        [](const coef::PutReward& p) { return json{{"kind", "put"}, {"strike", p.strike}}; },
                        [](const coef::BumpReward& b) {
                          return json{{"kind", "bump"}, {"amplitude", b.amplitude}, {"center", b.center}, {"width", b.width}};
                        },
                    },
                    g);
}

inline RewardFn reward_from_json(const json& j) {
  const auto kind = io_detail::field(j, "kind").get<std::string>();
  if (kind == "constant")
    return coef::ConstantReward{io_detail::field(j, "value").get<double>()};
  if (kind == "put")
    return coef::PutReward{io_detail::field(j, "strike").get<double>()};
  if (kind == "bump")
    return coef::BumpReward{io_detail::field(j, "amplitude").get<double>(), io_detail::field(j, "center").get<double>(),
                            io_detail::field(j, "width").get<double>()};
  throw std::invalid_argument("model JSON: unknown reward kind '" + kind + "'");
}

inline json to_json(const ModelSpec& s) {
  json levels = json::array();
  for (const auto& g : s.rewards)
    levels.push_back(to_json(g));
  return json{{"dimension", s.dimension},
              {"drift", to_json(s.drift)},
              {"diffusion", to_json(s.diffusion)},
              {"branch_rate", to_json(s.branch_rate)},
              {"alpha_bar", s.alpha_bar},
              {"offspring", to_json(s.offspring)},
              {"gamma", s.gamma},
              {"reward", {{"depth", s.depth()}, {"levels", levels}}},
              {"k_g", s.k_g}};
}

/// Parses and structurally validates. A single reward level with depth D > 0
/// is broadcast to every level.
inline ModelSpec model_from_json(const json& j) {
  using io_detail::field;
  try {
    ModelSpec s;
    s.dimension = field(j, "dimension").get<std::size_t>();
    s.drift = vector_field_from_json(field(j, "drift"));
    s.diffusion = vector_field_from_json(field(j, "diffusion"));
    s.branch_rate = rate_from_json(field(j, "branch_rate"));
    s.alpha_bar = field(j, "alpha_bar").get<double>();
    s.offspring = offspring_from_json(field(j, "offspring"));
    s.gamma = field(j, "gamma").get<double>();
    s.k_g = field(j, "k_g").get<double>();
    const auto& reward = field(j, "reward");
    const auto depth = reward.value("depth", std::size_t{0});
    s.rewards.clear();
    for (const auto& level : field(reward, "levels"))
      s.rewards.push_back(reward_from_json(level));
    if (s.rewards.size() == 1 && depth > 0)
      s.rewards.assign(depth + 1, s.rewards.front());
    if (s.rewards.size() != depth + 1)
      throw std::invalid_argument("model JSON: reward.levels must have depth + 1 entries");
    validate_structure(s);
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model JSON: ") + e.what());
  }
}

inline json to_json(const MomentReport& r) {
  return json{{"M", r.M},
              {"M_ell", r.M_ell},
              {"M_bar", r.M_bar},
              {"M_bar_argmax", r.M_bar_argmax},
              {"M_bar_attained", r.M_bar_attained},
              {"L_max", r.L_max},
              {"C", r.C},
              {"gamma_threshold", r.gamma_threshold},
              {"value_bound", r.value_bound},
              {"unique_below_bound", r.unique_below_bound}};
}

inline json to_json(const AssumptionSummary& a) {
  json lip = json::array();
  for (const auto& l : a.lipschitz)
    lip.push_back({{"coefficient", l.coefficient}, {"constant", l.constant}, {"validity", l.validity}});
  return json{{"alpha_sup_sampled", a.alpha_sup_sampled},
              {"alpha_sup_declared", a.alpha_sup_declared},
              {"probability_defect", a.probability_defect},
              {"reward_min", a.reward_min},
              {"reward_max", a.reward_max},
              {"poisson_lambda_max", a.poisson_lambda_max},
              {"lipschitz", lip},
              {"alpha_modulus", a.alpha_modulus},
              {"offspring_modulus", a.offspring_modulus},
              {"hard_violations", a.hard_violations},
              {"warnings", a.warnings},
              {"ok", a.ok()}};
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Stable fingerprint of the canonical JSON form.
inline std::string model_fingerprint(const ModelSpec& s) { return hex64(fnv1a64(to_json(s).dump())); }

} // namespace stopline
