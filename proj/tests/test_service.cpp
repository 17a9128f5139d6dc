#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "fixtures.h"
#include "freqclick/train.h"
#include "oracles.h"
#include "service_harness.h"

using namespace freqclick;
using harness::json;

namespace {

std::vector<Sample> data16(std::size_t n, std::uint64_t seed = 31) {
  GenConfig g;
  g.height = g.width = 16;
  g.seed = seed;
  return generate(g, n);
}

std::shared_ptr<const ModelRunner> trained_runner() {
  static const auto runner = [] {
    auto m = std::make_shared<SegModel<float>>(fixture::tiny_net(), 6);
    TrainConfig tc;
    tc.epochs = 4;
    tc.click_radius = 3;
    train(*m, data16(48, 40), tc);
    return std::make_shared<const ModelRunner>(m);
  }();
  return runner;
}

ServiceConfig config_with_model() {
  ServiceConfig c;
  c.click_radius = 3;
  c.models["tiny"] = trained_runner();
  c.default_model = "tiny";
  return c;
}

// Robot-user clicks from the offline loop, so the sequence hits error regions.
std::vector<ClickRecord> recorded_clicks(const Sample& s, const Refiner& r, int n) {
  EvalConfig cfg;
  cfg.click_radius = 3;
  cfg.click_cap = n;
  auto t = run_trajectory(s, r, cfg, 0);
  // Pad with fixed clicks when the robot converged early.
  for (int k = static_cast<int>(t.clicks.size()); k < n; ++k) {
    t.clicks.push_back({k + 1, {k % 16, (3 * k) % 16}, ClickPolarity::kPositive, -1});
  }
  return t.clicks;
}

}  // namespace

TEST(Base64, RoundTripAndRejection) {
  for (std::size_t n = 0; n < 12; ++n) {
    std::vector<std::uint8_t> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 37 + 200);
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
  EXPECT_EQ(base64_encode({'f', 'o', 'o', 'b'}), "Zm9vYg==");
  EXPECT_THROW(base64_decode("abc"), FormatError);
  EXPECT_THROW(base64_decode("ab!="), FormatError);
}

TEST(Service, HealthAndCors) {
  harness::Server srv(config_with_model());
  auto r = srv.client.Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const auto body = json::parse(r->body);
  EXPECT_EQ(body["status"], "ok");
  EXPECT_EQ(body["models"][0], "tiny");
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
  auto o = srv.client.Options("/sessions");
  ASSERT_TRUE(o);
  EXPECT_EQ(o->status, 204);
}

TEST(Service, CreateStatusCodes) {
  auto cfg = config_with_model();
  cfg.max_height = 20;
  cfg.max_width = 20;
  harness::Server srv(cfg);
  auto& cli = srv.client;
  const auto s = data16(1)[0];

  auto ok = harness::create(cli, s, false, "model");
  ASSERT_TRUE(ok);
  ASSERT_EQ(ok->status, 201);
  auto body = json::parse(ok->body);
  EXPECT_EQ(body["height"], 16);
  EXPECT_EQ(body["width"], 16);
  EXPECT_EQ(body["refiner"], "model");
  EXPECT_FALSE(body.contains("iou"));
  EXPECT_EQ(harness::mask_from_b64(body["mask"]).shape(), (Shape{16, 16}));

  auto oracle = harness::create(cli, s, true, "oracle");
  ASSERT_EQ(oracle->status, 201);
  body = json::parse(oracle->body);
  // Oracle sessions start from an empty mask.
  const auto empty = harness::mask_from_b64(body["mask"]);
  for (auto v : empty.vec()) ASSERT_EQ(v, 0);
  EXPECT_DOUBLE_EQ(body["iou"].get<double>(), 0.0);

  EXPECT_EQ(harness::create(cli, s, false, "oracle")->status, 422);
  json wrong_gt{{"image", harness::png_b64(to_gray(s.image))},
                {"gt", harness::png_b64(GrayImage{8, 16, std::vector<std::uint8_t>(128, 0)})}};
  EXPECT_EQ(cli.Post("/sessions", wrong_gt.dump(), "application/json")->status, 422);
  json unknown_model{{"image", harness::png_b64(to_gray(s.image))}, {"model_id", "huge"}};
  EXPECT_EQ(cli.Post("/sessions", unknown_model.dump(), "application/json")->status, 422);

  GrayImage big{24, 16, std::vector<std::uint8_t>(24 * 16, 9)};
  EXPECT_EQ(cli.Post("/sessions", json{{"image", harness::png_b64(big)}}.dump(), "application/json")->status, 413);
  EXPECT_EQ(cli.Post("/sessions", "{not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions", "[1,2]", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions", json{{"image", "Zm9v"}}.dump(), "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions", json{{"image", "%%%%"}}.dump(), "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions", json{{"other", 1}}.dump(), "application/json")->status, 400);
  json bad_mode{{"image", harness::png_b64(to_gray(s.image))}, {"refiner", "magic"}};
  EXPECT_EQ(cli.Post("/sessions", bad_mode.dump(), "application/json")->status, 400);
  const auto err = json::parse(cli.Post("/sessions", "{not json", "application/json")->body);
  EXPECT_TRUE(err.contains("error"));
}

TEST(Service, ClickStatusCodesAndStateOnError) {
  harness::Server srv(config_with_model());
  auto& cli = srv.client;
  const auto s = data16(1)[0];
  const std::string id = json::parse(harness::create(cli, s, true, "oracle")->body)["session_id"];
  EXPECT_EQ(harness::post_click(cli, "deadbeef", {1, {1, 1}, ClickPolarity::kPositive, -1})->status, 404);

  auto before = cli.Get("/sessions/" + id + "/mask")->body;
  EXPECT_EQ(harness::post_click(cli, id, {1, {16, 0}, ClickPolarity::kPositive, -1})->status, 400);
  EXPECT_EQ(harness::post_click(cli, id, {1, {0, -3}, ClickPolarity::kPositive, -1})->status, 400);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/clicks", R"({"row":1})", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/clicks", R"({"row":1,"col":1,"polarity":"up"})", "application/json")->status,
            400);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/mask")->body, before);
  EXPECT_TRUE(json::parse(cli.Get("/sessions/" + id + "/trajectory")->body)["clicks"].empty());

  // Oracle click on an error region never lowers IoU.
  double prev = 0;
  Rng rng(0);
  for (int k = 0; k < 5; ++k) {
    auto sug = cli.Get("/sessions/" + id + "/suggestion");
    if (sug->status == 204) break;
    const auto j = json::parse(sug->body);
    const ClickRecord c{0, {j["click"]["row"], j["click"]["col"]}, parse_click_polarity(j["polarity"]), -1};
    auto r = harness::post_click(cli, id, c);
    ASSERT_EQ(r->status, 200);
    const auto body = json::parse(r->body);
    EXPECT_EQ(body["click_index"], k + 1);
    EXPECT_GE(body["iou"].get<double>(), prev);
    prev = body["iou"];
  }
  const auto traj = json::parse(cli.Get("/sessions/" + id + "/trajectory")->body);
  EXPECT_EQ(traj["clicks"].size(), traj["ious"].size());
  EXPECT_EQ(traj["refiner"], "oracle");
  EXPECT_DOUBLE_EQ(traj["initial_iou"].get<double>(), 0.0);
}

TEST(Service, SuggestionMatchesBruteForceChoice) {
  harness::Server srv(config_with_model());
  auto& cli = srv.client;
  const auto data = data16(6, 77);
  ModelRefiner model(trained_runner());
  int compared = 0;
  for (const auto& s : data) {
    const auto clicks = recorded_clicks(s, model, 3);
    const std::string id = json::parse(harness::create(cli, s, true, "model")->body)["session_id"];
    ClickSession offline(model, s.image, s.gt, 3);
    for (std::size_t k = 0; k <= clicks.size(); ++k) {
      auto r = cli.Get("/sessions/" + id + "/suggestion");
      ASSERT_TRUE(r);
      const auto ref = oracle::brute_acselect(fixture::to_ints(offline.state().labels), fixture::to_ints(s.gt),
                                              fixture::fg_probs(offline.state().probs), 16, 16);
      if (ref.regions.empty()) {
        EXPECT_EQ(r->status, 204);
      } else {
        ASSERT_EQ(r->status, 200);
        const auto j = json::parse(r->body);
        const auto& best = ref.regions[ref.selected];
        EXPECT_EQ(j["region_id"], ref.selected);
        EXPECT_EQ(j["size"], best.pixels.size());
        std::vector<int> px;
        std::vector<std::pair<int, int>> rc;
        for (const auto& p : j["pixels"]) {
          px.push_back(p[0].get<int>() * 16 + p[1].get<int>());
          rc.push_back({p[0], p[1]});
        }
        EXPECT_EQ(px, best.pixels);
        EXPECT_NEAR(j["scores"]["mpe"].get<double>(), best.mpe, 1e-12);
        EXPECT_NEAR(j["scores"]["ape"].get<double>(), best.ape, 1e-12);
        EXPECT_NEAR(j["scores"]["rgu"].get<double>(), best.rgu, 1e-12);
        EXPECT_NEAR(j["scores"]["rs"].get<double>(), best.rs, 1e-12);
        EXPECT_EQ(j["polarity"], best.polarity == 2 ? "positive" : "negative");
        EXPECT_EQ(j["region_polarity"], best.polarity == 2 ? "FN" : "FP");
        const auto [er, ec] = oracle::deepest_pixel(rc, 16, 16);
        EXPECT_EQ(j["click"]["row"], er);
        EXPECT_EQ(j["click"]["col"], ec);
        // Outline pixels belong to the region.
        for (const auto& p : j["outline"]) {
          EXPECT_NE(std::find(px.begin(), px.end(), p[0].get<int>() * 16 + p[1].get<int>()), px.end());
        }
        ++compared;
      }
      if (k == clicks.size()) break;
      // Suggestions are advisory; they must not move the session.
      EXPECT_EQ(json::parse(cli.Get("/sessions/" + id + "/trajectory")->body)["clicks"].size(), k);
      ASSERT_EQ(harness::post_click(cli, id, clicks[k])->status, 200);
      offline.click(clicks[k].position, clicks[k].polarity);
    }
  }
  EXPECT_GT(compared, 0);
}

TEST(Service, SuggestionNeedsGtAndReportsConvergence) {
  harness::Server srv(config_with_model());
  auto& cli = srv.client;
  const auto s = data16(1)[0];
  const std::string no_gt = json::parse(harness::create(cli, s, false, "model")->body)["session_id"];
  EXPECT_EQ(cli.Get("/sessions/" + no_gt + "/suggestion")->status, 409);
  EXPECT_EQ(cli.Get("/sessions/ffff/suggestion")->status, 404);

  // A radius covering the image converges the oracle in one click.
  auto cfg = config_with_model();
  cfg.click_radius = 40;
  harness::Server wide(cfg);
  const std::string id = json::parse(harness::create(wide.client, s, true, "oracle")->body)["session_id"];
  const auto j = json::parse(wide.client.Get("/sessions/" + id + "/suggestion")->body);
  const ClickRecord c{1, {j["click"]["row"], j["click"]["col"]}, parse_click_polarity(j["polarity"]), -1};
  const auto r = json::parse(harness::post_click(wide.client, id, c)->body);
  EXPECT_DOUBLE_EQ(r["iou"].get<double>(), 1.0);
  EXPECT_EQ(wide.client.Get("/sessions/" + id + "/suggestion")->status, 204);
}

TEST(Service, HttpReplayIsBitExactInBothModes) {
  harness::Server srv(config_with_model());
  ModelRefiner model(trained_runner());
  OracleRefiner oracle;
  const auto data = data16(3, 5);
  for (const Refiner* r : {static_cast<const Refiner*>(&model), static_cast<const Refiner*>(&oracle)}) {
    for (const auto& s : data) {
      for (bool with_gt : {true, false}) {
        if (!with_gt && r == &oracle) continue;
        const auto clicks = recorded_clicks(s, *r, 10);
        const auto http = harness::replay_http(srv.client, s, with_gt, refiner_name(r->mode()), clicks);
        ASSERT_TRUE(http.ok) << http.error;
        const auto offline = replay(s.image, with_gt ? &s.gt : nullptr, clicks, *r, 3);
        ASSERT_EQ(http.masks.size(), offline.size());
        for (std::size_t k = 0; k < offline.size(); ++k) ASSERT_EQ(http.masks[k].vec(), offline[k].vec()) << k;
        if (with_gt) {
          ASSERT_EQ(http.ious.size(), clicks.size());
          for (std::size_t k = 0; k < clicks.size(); ++k) EXPECT_EQ(http.ious[k], iou(offline[k + 1], s.gt));
        }
      }
    }
  }
}

TEST(Service, ConcurrentClicksNeverInterleave) {
  harness::Server srv(config_with_model());
  const auto s = data16(1)[0];
  for (const std::string mode : {"model", "oracle"}) {
    const std::string id = json::parse(harness::create(srv.client, s, true, mode)->body)["session_id"];
    const auto res = harness::race(srv.port, id, 6, 8, 16, 16);
    ASSERT_TRUE(res.ok) << res.error;
    EXPECT_EQ(res.accepted + res.rejected, 48);
    EXPECT_GT(res.accepted, 0);
    // The final state is the one a serial replay of the accepted clicks yields.
    const auto traj = json::parse(srv.client.Get("/sessions/" + id + "/trajectory")->body);
    std::vector<ClickRecord> clicks;
    for (const auto& c : traj["clicks"]) {
      clicks.push_back({c["index"], {c["row"], c["col"]}, parse_click_polarity(c["polarity"]), -1});
    }
    ModelRefiner model(trained_runner());
    OracleRefiner oracle;
    const Refiner& r = mode == "model" ? static_cast<const Refiner&>(model) : oracle;
    const auto offline = replay(s.image, &s.gt, clicks, r, 3);
    const auto m = srv.client.Get("/sessions/" + id + "/mask");
    const auto mask = gray_to_mask(decode_png(reinterpret_cast<const std::uint8_t*>(m->body.data()), m->body.size()));
    EXPECT_EQ(mask.vec(), offline.back().vec());
  }
}

TEST(Service, SessionsAreIndependent) {
  harness::Server srv(config_with_model());
  const auto d = data16(2);
  const std::string a = json::parse(harness::create(srv.client, d[0], true, "oracle")->body)["session_id"];
  const std::string b = json::parse(harness::create(srv.client, d[1], true, "oracle")->body)["session_id"];
  EXPECT_NE(a, b);
  ASSERT_EQ(harness::post_click(srv.client, a, {1, {3, 3}, ClickPolarity::kPositive, -1})->status, 200);
  EXPECT_EQ(json::parse(srv.client.Get("/sessions/" + b + "/trajectory")->body)["clicks"].size(), 0u);
  EXPECT_EQ(srv.service.session_count(), 2u);
}

TEST(Service, DeleteAndTtlEviction) {
  auto cfg = config_with_model();
  cfg.ttl = std::chrono::seconds(1);
  harness::Server srv(cfg);
  const auto s = data16(1)[0];
  const std::string id = json::parse(harness::create(srv.client, s, true, "oracle")->body)["session_id"];
  EXPECT_EQ(srv.client.Delete("/sessions/" + id)->status, 204);
  EXPECT_EQ(srv.client.Delete("/sessions/" + id)->status, 404);
  EXPECT_EQ(srv.client.Get("/sessions/" + id + "/mask")->status, 404);
  EXPECT_EQ(srv.client.Get("/sessions/" + id + "/trajectory")->status, 404);

  const std::string idle = json::parse(harness::create(srv.client, s, true, "oracle")->body)["session_id"];
  EXPECT_EQ(srv.service.evict_idle(), 0u);
  std::this_thread::sleep_for(std::chrono::milliseconds(1500));
  EXPECT_EQ(srv.service.evict_idle(), 1u);
  EXPECT_EQ(srv.client.Get("/sessions/" + idle + "/mask")->status, 404);
}

TEST(Service, MaskPayloadRoundTripsToLabels) {
  harness::Server srv(config_with_model());
  const auto s = data16(1)[0];
  const auto created = json::parse(harness::create(srv.client, s, true, "model")->body);
  const std::string id = created["session_id"];
  ModelRefiner model(trained_runner());
  ClickSession offline(model, s.image, s.gt, 3);
  EXPECT_EQ(harness::mask_from_b64(created["mask"]).vec(), offline.state().labels.vec());
  const auto m = srv.client.Get("/sessions/" + id + "/mask");
  EXPECT_EQ(m->get_header_value("Content-Type"), "image/png");
}
