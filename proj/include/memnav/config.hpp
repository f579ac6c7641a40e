#pragma once

// Run configuration: JSON file plus dotted-key overrides. Every key of the default tree is accepted
// and nothing else.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memnav/error.hpp"
#include "memnav/eval.hpp"
#include "memnav/reachability.hpp"
#include "memnav/rl/ppo.hpp"
#include "memnav/rl/rewards.hpp"

namespace memnav {

struct StageConfig {
  RewardMode mode = RewardMode::kCuriosityDiscrete;
  PPOConfig ppo;
  int checkpoint_every = 50;  // batches; 0 keeps only the final checkpoint
};

struct RunConfig {
  std::string map = "fixtures/maps/maze15a.txt";
  std::uint64_t map_seed = 1;
  std::uint64_t seed = 1;
  int rays = kDefaultRays;
  std::string output = "runs/default";
  PairingConfig pairing;
  ReachTrainConfig reach;
  RewardConfig reward;
  StageConfig stage2;
  StageConfig stage3;
  GoalSetConfig goals;
  EvalConfig eval;

  RunConfig() {
    stage2.ppo.batches = 150;
    stage3.mode = RewardMode::kNavSparsePlusDense;
    stage3.ppo.batches = 150;
  }
};

using Json = nlohmann::ordered_json;

inline Json ppo_to_json(const PPOConfig& p) {
  return {{"batches", p.batches},
          {"episodes_per_batch", p.episodes_per_batch},
          {"steps_explore", p.steps_explore},
          {"steps_nav", p.steps_nav},
          {"ppo_epochs", p.ppo_epochs},
          {"minibatches", p.minibatches},
          {"gamma", p.gamma},
          {"gae_lambda", p.gae_lambda},
          {"clip", p.clip},
          {"entropy_coef", p.entropy_coef},
          {"value_coef", p.value_coef},
          {"learning_rate", p.learning_rate},
          {"warmup_steps", p.warmup_steps},
          {"max_grad_norm", p.max_grad_norm},
          {"rms_alpha", p.rms_alpha},
          {"rms_epsilon", p.rms_epsilon},
          {"weight_decay", p.weight_decay},
          {"dropout", p.dropout},
          {"train_cnn", p.train_cnn},
          {"workers", p.workers}};
}

inline void ppo_from_json(const Json& j, PPOConfig& p) {
  j.at("batches").get_to(p.batches);
  j.at("episodes_per_batch").get_to(p.episodes_per_batch);
  j.at("steps_explore").get_to(p.steps_explore);
  j.at("steps_nav").get_to(p.steps_nav);
  j.at("ppo_epochs").get_to(p.ppo_epochs);
  j.at("minibatches").get_to(p.minibatches);
  j.at("gamma").get_to(p.gamma);
  j.at("gae_lambda").get_to(p.gae_lambda);
  j.at("clip").get_to(p.clip);
  j.at("entropy_coef").get_to(p.entropy_coef);
  j.at("value_coef").get_to(p.value_coef);
  j.at("learning_rate").get_to(p.learning_rate);
  j.at("warmup_steps").get_to(p.warmup_steps);
  j.at("max_grad_norm").get_to(p.max_grad_norm);
  j.at("rms_alpha").get_to(p.rms_alpha);
  j.at("rms_epsilon").get_to(p.rms_epsilon);
  j.at("weight_decay").get_to(p.weight_decay);
  j.at("dropout").get_to(p.dropout);
  j.at("train_cnn").get_to(p.train_cnn);
  j.at("workers").get_to(p.workers);
}

inline Json stage_to_json(const StageConfig& s) {
  return {{"reward", mode_name(s.mode)}, {"checkpoint_every", s.checkpoint_every}, {"ppo", ppo_to_json(s.ppo)}};
}

inline void stage_from_json(const Json& j, StageConfig& s) {
  s.mode = parse_mode(j.at("reward").get<std::string>());
  j.at("checkpoint_every").get_to(s.checkpoint_every);
  ppo_from_json(j.at("ppo"), s.ppo);
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["map"] = c.map;
  j["map_seed"] = c.map_seed;
  j["seed"] = c.seed;
  j["rays"] = c.rays;
  j["output"] = c.output;
  j["stage1"] = {{"walk_steps", c.pairing.walk_steps},
                 {"walks", c.pairing.walks},
                 {"pairs_per_walk", c.pairing.pairs_per_walk},
                 {"positive_radius", c.pairing.positive_radius},
                 {"negative_margin", c.pairing.negative_margin},
                 {"epochs", c.reach.epochs},
                 {"batch", c.reach.batch},
                 {"learning_rate", c.reach.learning_rate},
                 {"momentum", c.reach.momentum},
                 {"weight_decay", c.reach.weight_decay},
                 {"holdout_fraction", c.reach.holdout_fraction},
                 {"final_lr_fraction", c.reach.final_lr_fraction},
                 {"swap_augment", c.reach.swap_augment}};
  j["reward"] = {{"alpha", c.reward.alpha}, {"beta", c.reward.beta}, {"continuous_beta", c.reward.continuous_beta},
                 {"tau", c.reward.tau}};
  j["stage2"] = stage_to_json(c.stage2);
  j["stage3"] = stage_to_json(c.stage3);
  j["eval"] = {{"goals", c.goals.count},
               {"min_distance", c.goals.min_distance},
               {"goal_seed", c.goals.seed},
               {"steps_explore", c.eval.steps_explore},
               {"steps_nav", c.eval.steps_nav},
               {"success_radius", c.eval.success_radius},
               {"seed", c.eval.seed}};
  return j;
}

inline RunConfig from_json(const Json& j) {
  RunConfig c;
  j.at("map").get_to(c.map);
  j.at("map_seed").get_to(c.map_seed);
  j.at("seed").get_to(c.seed);
  j.at("rays").get_to(c.rays);
  j.at("output").get_to(c.output);
  const Json& s1 = j.at("stage1");
  s1.at("walk_steps").get_to(c.pairing.walk_steps);
  s1.at("walks").get_to(c.pairing.walks);
  s1.at("pairs_per_walk").get_to(c.pairing.pairs_per_walk);
  s1.at("positive_radius").get_to(c.pairing.positive_radius);
  s1.at("negative_margin").get_to(c.pairing.negative_margin);
  s1.at("epochs").get_to(c.reach.epochs);
  s1.at("batch").get_to(c.reach.batch);
  s1.at("learning_rate").get_to(c.reach.learning_rate);
  s1.at("momentum").get_to(c.reach.momentum);
  s1.at("weight_decay").get_to(c.reach.weight_decay);
  s1.at("holdout_fraction").get_to(c.reach.holdout_fraction);
  s1.at("final_lr_fraction").get_to(c.reach.final_lr_fraction);
  s1.at("swap_augment").get_to(c.reach.swap_augment);
  const Json& r = j.at("reward");
  r.at("alpha").get_to(c.reward.alpha);
  r.at("beta").get_to(c.reward.beta);
  r.at("continuous_beta").get_to(c.reward.continuous_beta);
  r.at("tau").get_to(c.reward.tau);
  stage_from_json(j.at("stage2"), c.stage2);
  stage_from_json(j.at("stage3"), c.stage3);
  const Json& e = j.at("eval");
  e.at("goals").get_to(c.goals.count);
  e.at("min_distance").get_to(c.goals.min_distance);
  e.at("goal_seed").get_to(c.goals.seed);
  e.at("steps_explore").get_to(c.eval.steps_explore);
  e.at("steps_nav").get_to(c.eval.steps_nav);
  e.at("success_radius").get_to(c.eval.success_radius);
  e.at("seed").get_to(c.eval.seed);
  c.eval.tau = c.reward.tau;
  return c;
}

namespace detail {

inline bool same_kind(const Json& want, const Json& got) {
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_number_unsigned()) return got.is_number_unsigned();
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  if (want.is_string()) return got.is_string();
  if (want.is_object()) return got.is_object();
  return false;
}

inline void merge_strict(Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: " + (path.empty() ? std::string("top level") : path) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key " + where);
    Json& slot = base[key];
    if (!same_kind(slot, value)) throw ConfigError("config: wrong type for " + where);
    if (slot.is_object()) {
      merge_strict(slot, value, where);
    } else if (slot.is_number_float()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

}  // namespace detail

// "a.b.c=value"; value is read as JSON, falling back to a plain string.
inline void apply_override(Json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError("override has an empty key segment: " + key);
    patch = Json{{*it, patch}};
  }
  detail::merge_strict(tree, patch, "");
}

inline RunConfig load_config(const std::string& text, const std::vector<std::string>& overrides = {}) {
  Json tree = to_json(RunConfig{});
  if (!text.empty()) {
    Json user;
    try {
      user = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    detail::merge_strict(tree, user, "");
  }
  for (const auto& o : overrides) apply_override(tree, o);
  try {
    RunConfig c = from_json(tree);
    c.reward.validate();
    c.stage2.ppo.validate();
    c.stage3.ppo.validate();
    c.goals.validate();
    c.eval.validate();
    c.pairing.validate();
    if (c.rays < 8) throw ConfigError("config: rays must be >= 8");
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config(ss.str(), overrides);
}

}  // namespace memnav
