#include <chrono>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "prag/pipeline.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with it.
#include "httplib.h"
#include "json.hpp"

namespace prag {
namespace {

using nlohmann::json;

std::string error_body(std::string_view message) { return json{{"error", message}}.dump(); }

}  // namespace

ServiceConfig ServiceConfig::from_json(std::string_view json_text) {
  ServiceConfig c;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("service config is not JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "service config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "base_checkpoint") {
        c.base_checkpoint = v.get<std::string>();
      } else if (key == "corpus") {
        c.corpus = v.get<std::string>();
      } else if (key == "index") {
        c.index = v.get<std::string>();
      } else if (key == "store_root") {
        c.store_root = v.get<std::string>();
      } else if (key == "default_mode") {
        c.default_mode = parse_mode(v.get<std::string>());
      } else if (key == "default_k") {
        c.default_k = v.get<int>();
      } else if (key == "bind_host") {
        c.bind_host = v.get<std::string>();
      } else if (key == "bind_port") {
        c.bind_port = v.get<int>();
      } else if (key == "generation_budget") {
        c.generation_budget = v.get<int>();
      } else {
        fail(ErrorCode::kInvalidArgument, "unknown service config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad service config value: ") + e.what());
  }
  if (c.default_k < 1) fail(ErrorCode::kInvalidArgument, "default_k must be >= 1");
  if (c.bind_port < 0 || c.bind_port > 65535) fail(ErrorCode::kInvalidArgument, "bad bind_port");
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  ServiceConfig c = from_json(read_file(path));
  c.apply_env_overrides();
  return c;
}

void ServiceConfig::apply_env_overrides() {
  if (const char* bind = std::getenv("PRAG_BIND"); bind && *bind) {
    const std::string_view s(bind);
    const auto colon = s.rfind(':');
    if (colon == std::string_view::npos) {
      bind_host = std::string(s);
    } else {
      bind_host = std::string(s.substr(0, colon));
      try {
        bind_port = std::stoi(std::string(s.substr(colon + 1)));
      } catch (const std::exception&) {
        fail(ErrorCode::kInvalidArgument, "PRAG_BIND port is not a number: " + std::string(s));
      }
    }
  }
  if (const char* root = std::getenv("PRAG_ROOT"); root && *root) store_root = root;
}

void QueryService::load() {
  base_ = std::make_unique<ModelParams>(load_params(config_.base_checkpoint));
  corpus_ = std::make_unique<Corpus>(Corpus::load_jsonl(config_.corpus));
  index_ = std::make_unique<InvertedIndex>(config_.index.empty()
                                               ? InvertedIndex::build(*corpus_)
                                               : InvertedIndex::load(config_.index));
  if (!config_.store_root.empty()) {
    store_ = std::make_unique<ParametricCorpus>(ParametricCorpus::open(config_.store_root));
  }
  PipelineComponents c;
  c.base = base_.get();
  c.corpus = corpus_.get();
  c.index = index_.get();
  c.store = store_.get();
  c.generation_budget = config_.generation_budget;
  pipeline_ = std::make_unique<Pipeline>(c);
  ready_.store(true);
}

std::pair<int, std::string> QueryService::handle_health() const {
  if (!ready()) return {503, json{{"status", "loading"}}.dump()};
  return {200, json{{"status", "ok"},
                    {"base_fingerprint", to_hex(base_->fingerprint)},
                    {"documents", corpus_->size()},
                    {"adapters", store_ ? store_->size() : 0}}
                   .dump()};
}

std::pair<int, std::string> QueryService::handle_query(std::string_view body) const {
  if (!ready()) return {503, error_body("service is loading")};
  std::string question;
  Mode mode = config_.default_mode;
  int k = config_.default_k;
  try {
    const json j = json::parse(body);
    if (!j.is_object()) return {400, error_body("body must be a JSON object")};
    if (!j.contains("question") || !j["question"].is_string()) {
      return {400, error_body("'question' must be a string")};
    }
    question = j["question"].get<std::string>();
    if (j.contains("mode")) {
      if (!j["mode"].is_string()) return {400, error_body("'mode' must be a string")};
      mode = parse_mode(j["mode"].get<std::string>());
    }
    if (j.contains("k")) {
      if (!j["k"].is_number_integer()) return {400, error_body("'k' must be an integer")};
      k = j["k"].get<int>();
    }
  } catch (const json::exception& e) {
    return {400, error_body(std::string("malformed JSON: ") + e.what())};
  } catch (const Error& e) {
    return {400, error_body(e.what())};
  }
  try {
    return {200, query_result_to_json(pipeline_->answer(question, mode, k))};
  } catch (const Error& e) {
    const bool client_fault = e.code() == ErrorCode::kInvalidArgument ||
                              e.code() == ErrorCode::kOverlong;
    return {client_fault ? 400 : 500, error_body(e.what())};
  }
}

void serve(const ServiceConfig& config, const std::atomic<bool>* stop_flag,
           std::function<void(int port)> on_listening) {
  QueryService service(config);
  httplib::Server server;
  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
    const auto [status, body] = service.handle_health();
    res.status = status;
    res.set_content(body, "application/json");
  });
  server.Post("/query", [&](const httplib::Request& req, httplib::Response& res) {
    const auto [status, body] = service.handle_query(req.body);
    res.status = status;
    res.set_content(body, "application/json");
  });

  int port = config.bind_port;
  if (port == 0) {
    port = server.bind_to_any_port(config.bind_host);
  } else if (!server.bind_to_port(config.bind_host, port)) {
    port = -1;
  }
  if (port < 0) {
    fail(ErrorCode::kIoFailure,
         "cannot bind " + config.bind_host + ":" + std::to_string(config.bind_port));
  }
  std::thread listener([&] { server.listen_after_bind(); });
  std::clog << "listening on " << config.bind_host << ":" << port << "\n";
  if (on_listening) on_listening(port);

  try {
    service.load();
  } catch (...) {
    server.stop();
    listener.join();
    throw;
  }
  std::clog << "ready\n";

  while (!stop_flag || !stop_flag->load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  listener.join();
}

}  // namespace prag
