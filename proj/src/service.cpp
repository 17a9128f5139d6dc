#include "freqclick/service.h"

#include <openssl/evp.h>

#include <random>

#include "freqclick/image_io.h"
#include "httplib.h"
#include "json.hpp"

namespace freqclick {

using nlohmann::json;

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4 + 1);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("malformed base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock counts padding as zero bytes.
  for (std::size_t i = text.size(); i > 0 && text[i - 1] == '='; --i) --len;
  out.resize(len);
  return out;
}

struct SessionService::Session {
  std::string id;
  RefinerMode mode = RefinerMode::kOracle;
  std::unique_ptr<ClickSession> loop;
  std::optional<double> initial_iou;
  std::mutex mutate_mu;
  std::shared_mutex state_mu;
  std::atomic<std::int64_t> last_access{0};

  void touch() { last_access = std::chrono::steady_clock::now().time_since_epoch().count(); }
};

namespace {

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, json{{"error", msg}});
}

std::string encode_mask(const LabelMap& m) { return base64_encode(encode_png(mask_to_gray(m))); }

GrayImage decode_field(const json& body, const char* key) {
  try {
    return decode_png(base64_decode(body.at(key).get<std::string>()));
  } catch (const json::exception&) {
    throw HttpError(400, std::string("field '") + key + "' must be a base64 PNG string");
  } catch (const FormatError& e) {
    throw HttpError(400, std::string("cannot decode '") + key + "': " + e.what());
  }
}

std::string new_session_id() {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard lock(mu);
  static const char* hex = "0123456789abcdef";
  std::string id;
  for (int i = 0; i < 4; ++i) {
    std::uint32_t v = rd();
    for (int k = 0; k < 8; ++k, v >>= 4) id += hex[v & 15];
  }
  return id;
}

json click_json(const ClickRecord& c) {
  return {{"index", c.index},
          {"row", c.position.row},
          {"col", c.position.col},
          {"polarity", click_polarity_name(c.polarity)},
          {"source_region_id", c.source_region_id}};
}

// Pixels of `r` with a 4-neighbour outside the region or the image.
std::vector<Pixel> outline(const Region& r, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> in(h * w, 0);
  for (const auto& p : r.pixels) in[p.row * w + p.col] = 1;
  std::vector<Pixel> out;
  const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (const auto& p : r.pixels) {
    for (int k = 0; k < 4; ++k) {
      const int y = p.row + dy[k], x = p.col + dx[k];
      if (y < 0 || x < 0 || y >= static_cast<int>(h) || x >= static_cast<int>(w) || !in[y * w + x]) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

json pixels_json(const std::vector<Pixel>& px) {
  json a = json::array();
  for (const auto& p : px) a.push_back({p.row, p.col});
  return a;
}

}  // namespace

SessionService::SessionService(ServiceConfig cfg) : cfg_(std::move(cfg)), server_(std::make_unique<httplib::Server>()) {
  if (cfg_.click_radius < 1) throw ConfigError("click radius must be >= 1");
  if (cfg_.max_height < 1 || cfg_.max_width < 1) throw ConfigError("max extents must be positive");
  for (const auto& [id, runner] : cfg_.models) {
    if (!runner) throw ConfigError("model '" + id + "' is null");
    model_refiners_[id] = std::make_unique<ModelRefiner>(runner);
  }
  if (cfg_.default_model.empty() && !cfg_.models.empty()) cfg_.default_model = cfg_.models.begin()->first;
  if (!cfg_.default_model.empty() && !cfg_.models.count(cfg_.default_model)) {
    throw ConfigError("default model '" + cfg_.default_model + "' is not loaded");
  }
  server_->set_payload_max_length(cfg_.max_body_bytes);
  routes();
}

SessionService::~SessionService() { stop(); }

int SessionService::start() {
  port_ = cfg_.port == 0 ? server_->bind_to_any_port(cfg_.host) : (server_->bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
  if (port_ < 0) throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void SessionService::run() {
  if (!server_->listen(cfg_.host, cfg_.port)) throw std::runtime_error("cannot listen on port " + std::to_string(cfg_.port));
}

void SessionService::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::size_t SessionService::evict_idle() {
  const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
  const auto ttl = std::chrono::duration_cast<std::chrono::steady_clock::duration>(cfg_.ttl).count();
  std::lock_guard lock(map_mu_);
  return std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second->last_access.load() > ttl; });
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(map_mu_);
  return sessions_.size();
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) {
  std::lock_guard lock(map_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw HttpError(404, "unknown session '" + id + "'");
  it->second->touch();
  return it->second;
}

void SessionService::routes() {
  auto& srv = *server_;

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const HttpError& e) {
      send_error(res, e.status(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  srv.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
  });
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    json models = json::array();
    for (const auto& [id, _] : cfg_.models) models.push_back(id);
    send_json(res, 200, {{"status", "ok"}, {"sessions", session_count()}, {"models", models}});
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    evict_idle();
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      throw HttpError(400, "request body is not valid JSON");
    }
    if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
    const GrayImage img = decode_field(body, "image");
    if (img.height > cfg_.max_height || img.width > cfg_.max_width) {
      throw HttpError(413, "image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                               " exceeds the configured maximum " + std::to_string(cfg_.max_height) + "x" +
                               std::to_string(cfg_.max_width));
    }
    std::optional<LabelMap> gt;
    if (body.contains("gt") && !body["gt"].is_null()) {
      const GrayImage g = decode_field(body, "gt");
      if (g.height != img.height || g.width != img.width) throw HttpError(422, "gt extents do not match the image");
      gt = gray_to_mask(g);
    }
    std::string mode_name = body.value("refiner", cfg_.models.empty() ? "oracle" : "model");
    RefinerMode mode;
    try {
      mode = parse_refiner(mode_name);
    } catch (const ConfigError& e) {
      throw HttpError(400, e.what());
    }
    const Refiner* refiner = &oracle_;
    if (mode == RefinerMode::kOracle) {
      if (!gt) throw HttpError(422, "oracle mode requires gt");
    } else {
      const std::string model_id = body.value("model_id", cfg_.default_model);
      auto it = model_refiners_.find(model_id);
      if (it == model_refiners_.end()) throw HttpError(422, "model '" + model_id + "' is not loaded");
      refiner = it->second.get();
    }
    auto s = std::make_shared<Session>();
    s->id = new_session_id();
    s->mode = mode;
    try {
      s->loop = std::make_unique<ClickSession>(*refiner, from_gray(img), std::move(gt), cfg_.click_radius);
    } catch (const ConfigError& e) {
      throw HttpError(422, e.what());
    }
    s->initial_iou = s->loop->current_iou();
    s->touch();
    json out{{"session_id", s->id},
             {"mask", encode_mask(s->loop->state().labels)},
             {"height", img.height},
             {"width", img.width},
             {"refiner", refiner_name(mode)}};
    if (auto v = s->loop->current_iou()) out["iou"] = *v;
    {
      std::lock_guard lock(map_mu_);
      sessions_[s->id] = s;
    }
    send_json(res, 201, out);
  });

  srv.Post(R"(/sessions/([0-9a-f]+)/clicks)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::unique_lock mutate(s->mutate_mu, std::try_to_lock);
    if (!mutate.owns_lock()) throw HttpError(409, "another mutation of this session is in flight");
    int row = 0, col = 0;
    ClickPolarity pol;
    try {
      const auto body = json::parse(req.body);
      row = body.at("row").get<int>();
      col = body.at("col").get<int>();
      pol = parse_click_polarity(body.at("polarity").get<std::string>());
    } catch (const json::exception&) {
      throw HttpError(400, "click body must be {row, col, polarity}");
    } catch (const ConfigError& e) {
      throw HttpError(400, e.what());
    }
    std::unique_lock state(s->state_mu);
    try {
      s->loop->click({row, col}, pol);
    } catch (const ContractError& e) {
      throw HttpError(400, e.what());
    }
    json out{{"mask", encode_mask(s->loop->state().labels)}, {"click_index", s->loop->clicks().size()}};
    if (auto v = s->loop->current_iou()) out["iou"] = *v;
    send_json(res, 200, out);
  });

  srv.Get(R"(/sessions/([0-9a-f]+)/suggestion)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::shared_lock state(s->state_mu);
    if (!s->loop->gt()) throw HttpError(409, "suggestions need a session with gt");
    Rng rng(0);
    std::size_t chosen = 0;
    const auto regions = s->loop->regions(SelectionPolicy{}, rng, chosen);
    if (regions.empty()) {
      res.status = 204;
      return;
    }
    const auto& r = regions[chosen];
    const std::size_t h = s->loop->image().dim(0), w = s->loop->image().dim(1);
    const auto c = place_click(r, h, w);
    send_json(res, 200,
              {{"region_id", r.id},
               {"region_polarity", polarity_name(r.polarity)},
               {"polarity", click_polarity_name(c.polarity)},
               {"size", r.size()},
               {"pixels", pixels_json(r.pixels)},
               {"outline", pixels_json(outline(r, h, w))},
               {"click", {{"row", c.position.row}, {"col", c.position.col}}},
               {"scores",
                {{"mpe", r.scores.mpe},
                 {"ape", r.scores.ape},
                 {"rgu", r.scores.rgu},
                 {"rs", r.scores.rs},
                 {"mpe_n", r.scores.mpe_n},
                 {"ape_n", r.scores.ape_n},
                 {"rgu_n", r.scores.rgu_n}}}});
  });

  srv.Get(R"(/sessions/([0-9a-f]+)/mask)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::shared_lock state(s->state_mu);
    const auto png = encode_png(mask_to_gray(s->loop->state().labels));
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  });

  srv.Get(R"(/sessions/([0-9a-f]+)/trajectory)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::shared_lock state(s->state_mu);
    json clicks = json::array();
    for (const auto& c : s->loop->clicks()) clicks.push_back(click_json(c));
    json out{{"clicks", clicks}, {"ious", s->loop->ious()}, {"refiner", refiner_name(s->mode)}};
    if (s->initial_iou) out["initial_iou"] = *s->initial_iou;
    send_json(res, 200, out);
  });

  srv.Delete(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(map_mu_);
    if (sessions_.erase(req.matches[1]) == 0) throw HttpError(404, "unknown session");
    res.status = 204;
  });
}

}  // namespace freqclick
