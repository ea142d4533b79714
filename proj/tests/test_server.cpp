#include <gtest/gtest.h>

#include <cstdlib>
#include <future>
#include <thread>

#include "json.hpp"
#include "prag/pipeline.hpp"
#include "support.hpp"
// After Eigen: <resolv.h> defines a _res macro that collides with it.
#include "httplib.h"

namespace prag {
namespace {

using nlohmann::json;
using testing::random_adapter;
using testing::TempDir;
using testing::tiny_config;

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const ModelParams base = init_params(tiny_config(1, 16, 32, 2, 256), 4);
    save_params(base, dir / "base.bin");
    fingerprint = base.fingerprint;
    Corpus corpus;
    corpus.add("a", "Alderville is the capital of Bruneth.");
    corpus.add("b", "Corvale was founded by Dunmore traders.");
    corpus.save_jsonl(dir / "corpus.jsonl");
    auto store = ParametricCorpus::open(dir / "store");
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      store.put(random_adapter(AdapterConfig{}, base, corpus[i].id, i + 1, 0.3));
    }
    config.base_checkpoint = dir / "base.bin";
    config.corpus = dir / "corpus.jsonl";
    config.store_root = dir / "store";
    config.generation_budget = 8;
    config.bind_port = 0;
  }

  TempDir dir;
  ServiceConfig config;
  std::uint64_t fingerprint = 0;
};

TEST_F(ServiceTest, NotReadyBeforeLoad) {
  QueryService service(config);
  EXPECT_FALSE(service.ready());
  EXPECT_EQ(service.handle_query(R"({"question":"x"})").first, 503);
  EXPECT_EQ(service.handle_health().first, 503);
  service.load();
  EXPECT_TRUE(service.ready());
  const auto [status, body] = service.handle_health();
  EXPECT_EQ(status, 200);
  const auto j = json::parse(body);
  EXPECT_EQ(j["base_fingerprint"], to_hex(fingerprint));
  EXPECT_EQ(j["documents"], 2);
  EXPECT_EQ(j["adapters"], 2);
}

TEST_F(ServiceTest, BadRequestsGet400) {
  QueryService service(config);
  service.load();
  EXPECT_EQ(service.handle_query("not json").first, 400);
  EXPECT_EQ(service.handle_query("[1,2]").first, 400);
  EXPECT_EQ(service.handle_query(R"({"mode":"parametric"})").first, 400);
  EXPECT_EQ(service.handle_query(R"({"question":"q","mode":"oracle"})").first, 400);
  EXPECT_EQ(service.handle_query(R"({"question":"q","k":"3"})").first, 400);
  EXPECT_EQ(service.handle_query(R"({"question":"q","k":0})").first, 400);
  const auto [status, body] = service.handle_query(R"({"question":"Who founded Corvale?","k":1})");
  EXPECT_EQ(status, 200);
  const auto j = json::parse(body);
  EXPECT_EQ(j["mode"], "parametric");
  EXPECT_EQ(j["merged_doc_ids"].size(), 1u);
}

TEST_F(ServiceTest, ServesConcurrentIdenticalQueries) {
  std::atomic<bool> stop{false};
  std::promise<int> port_promise;
  auto port_future = port_promise.get_future();
  std::thread server([&] {
    serve(config, &stop, [&](int port) { port_promise.set_value(port); });
  });
  const int port = port_future.get();
  ASSERT_GT(port, 0);

  httplib::Client probe("127.0.0.1", port);
  std::string health;
  for (int i = 0; i < 400; ++i) {
    auto res = probe.Get("/health");
    ASSERT_TRUE(res);
    if (res->status == 200) {
      health = res->body;
      break;
    }
    EXPECT_EQ(res->status, 503);
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  ASSERT_FALSE(health.empty());

  const std::string body = R"({"question":"Who founded Corvale?","mode":"parametric","k":2})";
  std::vector<std::future<std::pair<int, std::string>>> calls;
  for (int i = 0; i < 16; ++i) {
    calls.push_back(std::async(std::launch::async, [&] {
      httplib::Client c("127.0.0.1", port);
      c.set_read_timeout(120, 0);
      auto res = c.Post("/query", body, "application/json");
      if (!res) return std::make_pair(-1, httplib::to_string(res.error()));
      return std::make_pair(res->status, json::parse(res->body)["answer"].get<std::string>());
    }));
  }
  std::vector<std::pair<int, std::string>> results;
  for (auto& f : calls) results.push_back(f.get());
  stop = true;
  server.join();
  for (const auto& r : results) {
    EXPECT_EQ(r.first, 200);
    EXPECT_EQ(r.second, results[0].second);
  }
}

TEST(ServiceConfigTest, ParsesAndRejectsUnknownKeys) {
  const auto c = ServiceConfig::from_json(
      R"({"base_checkpoint":"b.bin","corpus":"c.jsonl","default_mode":"in_context","default_k":5,"bind_port":9000})");
  EXPECT_EQ(c.base_checkpoint, "b.bin");
  EXPECT_EQ(c.default_mode, Mode::kInContext);
  EXPECT_EQ(c.default_k, 5);
  EXPECT_EQ(c.bind_port, 9000);
  EXPECT_THROW(ServiceConfig::from_json(R"({"corpsu":"x"})"), Error);
  EXPECT_THROW(ServiceConfig::from_json(R"({"default_k":0})"), Error);
  EXPECT_THROW(ServiceConfig::from_json(R"({"bind_port":70000})"), Error);
  EXPECT_THROW(ServiceConfig::from_json("nope"), Error);
}

TEST(ServiceConfigTest, EnvironmentOverrides) {
  ServiceConfig c;
  ::setenv("PRAG_BIND", "0.0.0.0:9123", 1);
  ::setenv("PRAG_ROOT", "/tmp/elsewhere", 1);
  c.apply_env_overrides();
  ::unsetenv("PRAG_BIND");
  ::unsetenv("PRAG_ROOT");
  EXPECT_EQ(c.bind_host, "0.0.0.0");
  EXPECT_EQ(c.bind_port, 9123);
  EXPECT_EQ(c.store_root, "/tmp/elsewhere");
  ::setenv("PRAG_BIND", "host:port", 1);
  EXPECT_THROW(c.apply_env_overrides(), Error);
  ::unsetenv("PRAG_BIND");
}

}  // namespace
}  // namespace prag
