#include "run_config.hpp"

#include <set>

namespace prag::cli {
namespace {

using nlohmann::json;

void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "config section '" + std::string(section) + "' must be an object");
  const std::set<std::string_view> keys(allowed);
  for (const auto& [key, v] : j.items()) {
    if (!keys.contains(key)) {
      fail(ErrorCode::kInvalidArgument,
           "unknown config key '" + std::string(section) + (section.empty() ? "" : ".") + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, RunConfig c) {
  try {
    check_keys(j, "", {"paths", "model", "pretrain", "adapter", "train", "augment", "retrieval", "seed"});
    read(j, "seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      check_keys(p, "paths", {"corpus", "qa", "pretrain_text", "base", "index", "root", "reports"});
      read(p, "corpus", c.paths.corpus);
      read(p, "qa", c.paths.qa);
      read(p, "pretrain_text", c.paths.pretrain_text);
      read(p, "base", c.paths.base);
      read(p, "index", c.paths.index);
      read(p, "root", c.paths.root);
      read(p, "reports", c.paths.reports);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, "model", {"n_layers", "hidden", "ffn", "n_heads", "max_seq_len"});
      read(m, "n_layers", c.model.n_layers);
      read(m, "hidden", c.model.hidden);
      read(m, "ffn", c.model.ffn);
      read(m, "n_heads", c.model.n_heads);
      read(m, "max_seq_len", c.model.max_seq_len);
    }
    if (j.contains("pretrain")) {
      const auto& p = j["pretrain"];
      check_keys(p, "pretrain", {"steps", "batch", "seq_len", "learning_rate", "warmup_steps"});
      read(p, "steps", c.pretrain.steps);
      read(p, "batch", c.pretrain.batch);
      read(p, "seq_len", c.pretrain.seq_len);
      read(p, "learning_rate", c.pretrain.learning_rate);
      read(p, "warmup_steps", c.pretrain.warmup_steps);
    }
    if (j.contains("adapter")) {
      const auto& a = j["adapter"];
      check_keys(a, "adapter", {"rank", "alpha", "scaling"});
      read(a, "rank", c.adapter.rank);
      read(a, "alpha", c.adapter.alpha);
      if (a.contains("scaling")) c.adapter.scaling = parse_scaling_mode(a["scaling"].get<std::string>());
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, "train", {"learning_rate", "epochs", "optimizer", "beta1", "beta2", "eps",
                              "weight_decay", "dropout", "grad_clip_norm", "seed"});
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "epochs", c.train.epochs);
      if (t.contains("optimizer")) c.train.optimizer = parse_optimizer(t["optimizer"].get<std::string>());
      read(t, "beta1", c.train.beta1);
      read(t, "beta2", c.train.beta2);
      read(t, "eps", c.train.eps);
      read(t, "weight_decay", c.train.weight_decay);
      read(t, "dropout", c.train.dropout);
      read(t, "grad_clip_norm", c.train.grad_clip_norm);
      read(t, "seed", c.train.seed);
    }
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      check_keys(a, "augment", {"rewrites", "questions", "kind", "endpoint", "model", "max_in_flight"});
      read(a, "rewrites", c.augment.rewrites);
      read(a, "questions", c.augment.questions);
      read(a, "kind", c.augment.kind);
      read(a, "endpoint", c.augment.endpoint);
      read(a, "model", c.augment.model);
      read(a, "max_in_flight", c.augment.max_in_flight);
    }
    if (j.contains("retrieval")) {
      const auto& r = j["retrieval"];
      check_keys(r, "retrieval", {"k1", "b", "k"});
      read(r, "k1", c.retrieval.k1);
      read(r, "b", c.retrieval.b);
      read(r, "k", c.retrieval.k);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad config value: ") + e.what());
  }
  return c;
}

json RunConfig::to_json() const {
  return {
      {"paths",
       {{"corpus", paths.corpus},
        {"qa", paths.qa},
        {"pretrain_text", paths.pretrain_text},
        {"base", paths.base},
        {"index", paths.index},
        {"root", paths.root},
        {"reports", paths.reports}}},
      {"model",
       {{"n_layers", model.n_layers},
        {"hidden", model.hidden},
        {"ffn", model.ffn},
        {"n_heads", model.n_heads},
        {"max_seq_len", model.max_seq_len}}},
      {"pretrain",
       {{"steps", pretrain.steps},
        {"batch", pretrain.batch},
        {"seq_len", pretrain.seq_len},
        {"learning_rate", pretrain.learning_rate},
        {"warmup_steps", pretrain.warmup_steps}}},
      {"adapter",
       {{"rank", adapter.rank}, {"alpha", adapter.alpha}, {"scaling", to_string(adapter.scaling)}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"epochs", train.epochs},
        {"optimizer", to_string(train.optimizer)},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"eps", train.eps},
        {"weight_decay", train.weight_decay},
        {"dropout", train.dropout},
        {"grad_clip_norm", train.grad_clip_norm},
        {"seed", train.seed}}},
      {"augment",
       {{"rewrites", augment.rewrites},
        {"questions", augment.questions},
        {"kind", augment.kind},
        {"endpoint", augment.endpoint},
        {"model", augment.model},
        {"max_in_flight", augment.max_in_flight}}},
      {"retrieval", {{"k1", retrieval.k1}, {"b", retrieval.b}, {"k", retrieval.k}}},
      {"seed", seed},
  };
}

void RunConfig::validate() const {
  model.validate();
  adapter.validate(model);
  train.validate();
  if (pretrain.steps < 1 || pretrain.batch < 1 || pretrain.seq_len < 2 || pretrain.warmup_steps < 0 ||
      !(pretrain.learning_rate > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "pretrain settings out of range");
  }
  if (augment.rewrites < 0 || augment.questions < 1) {
    fail(ErrorCode::kInvalidArgument, "augment.rewrites must be >= 0 and augment.questions >= 1");
  }
  if (augment.kind != "rule" && augment.kind != "llm") {
    fail(ErrorCode::kInvalidArgument, "augment.kind must be 'rule' or 'llm'");
  }
  if (augment.max_in_flight < 1) fail(ErrorCode::kInvalidArgument, "augment.max_in_flight must be >= 1");
  if (!(retrieval.k1 > 0.0) || retrieval.b < 0.0 || retrieval.b > 1.0 || retrieval.k < 1) {
    fail(ErrorCode::kInvalidArgument, "retrieval settings out of range");
  }
}

}  // namespace prag::cli
