#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "freqclick/click_loop.h"

namespace httplib {
class Server;
}

namespace freqclick {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Throws FormatError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t max_height = 512;
  std::size_t max_width = 512;
  std::size_t max_body_bytes = 8 << 20;
  std::chrono::seconds ttl{30 * 60};
  int click_radius = 5;
  // Models available to sessions by id; the first one is the default.
  std::map<std::string, std::shared_ptr<const ModelRunner>> models;
  std::string default_model;
};

// Interactive sessions over HTTP. Wire contract (JSON bodies, masks as
// base64 PNG with foreground 255):
//
//   POST /sessions            {image, gt?, refiner?, model_id?}
//                             201 {session_id, mask, height, width, refiner, iou?}
//                             400 undecodable, 413 oversize, 422 gt/mode mismatch
//   POST /sessions/{id}/clicks {row, col, polarity}
//                             200 {mask, click_index, iou?}; 400, 404, 409
//   GET  /sessions/{id}/suggestion
//                             200 {region_id, region_polarity, polarity, size,
//                                  pixels, outline, click{row,col}, scores{mpe,ape,rgu,rs}}
//                             204 converged, 409 no gt, 404
//   GET  /sessions/{id}/mask        200 image/png, 404
//   GET  /sessions/{id}/trajectory  200 {clicks[], ious[], initial_iou?}, 404
//   DELETE /sessions/{id}           204, 404
//
// A click arriving while another mutation of the same session is in flight
// is rejected with 409; reads never block each other.
class SessionService {
 public:
  explicit SessionService(ServiceConfig cfg);
  ~SessionService();
  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  // Bind and serve on a background thread. Returns the bound port.
  int start();
  // Serve on the calling thread until stop().
  void run();
  void stop();

  // Drop sessions idle for longer than the TTL. Returns how many were removed.
  std::size_t evict_idle();
  std::size_t session_count() const;

  const ServiceConfig& config() const { return cfg_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);
  void routes();

  ServiceConfig cfg_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex map_mu_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  OracleRefiner oracle_;
  std::map<std::string, std::unique_ptr<ModelRefiner>> model_refiners_;
};

}  // namespace freqclick
