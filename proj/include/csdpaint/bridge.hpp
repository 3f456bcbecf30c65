#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csdpaint/distill.hpp"
#include "csdpaint/schedule.hpp"

namespace csdpaint {

// Wire format of the diffusion bridge. Every frame is
//   u32 LE  length of everything after this field
//   u8      message type
//   UTF-8   "key=value\n" header lines, terminated by an empty line
//   bytes   payload: f32 LE tensors in C,H,W order
// Header values escape '\' as "\\" and newline as "\n".
enum class MessageType : std::uint8_t {
  handshake = 0,
  base_predict = 1,
  super_predict = 2,
  error = 255,
};

std::string to_string(MessageType type);

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

struct Frame {
  MessageType type = MessageType::handshake;
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<float> payload;

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  // Throws ProviderError if the key is absent.
  std::string require(const std::string& key) const;
};

// Full frame including the length prefix.
std::vector<std::uint8_t> encode_frame(const Frame& frame);
// Decodes the bytes after the length prefix.
Frame decode_frame(std::span<const std::uint8_t> body);

struct TensorShape {
  int channels = 0;
  Resolution resolution;

  std::size_t size() const { return static_cast<std::size_t>(channels) * resolution.pixels(); }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

std::string format_shape(const TensorShape& shape);
TensorShape parse_shape(const std::string& text);
std::string format_resolutions(std::span<const Resolution> res);
std::vector<Resolution> parse_resolutions(const std::string& text);

void append_image(std::vector<float>& payload, const Image& img);
Image image_from_payload(std::span<const float> payload, const TensorShape& shape);

// Blocking frame I/O on a connected socket. read_frame returns nullopt on a
// clean end of stream before the first byte of a frame.
void write_frame(int fd, const Frame& frame);
std::optional<Frame> read_frame(int fd);

struct BridgeInfo {
  std::vector<Resolution> stages;
  NoiseSchedule schedule;
  std::string model;
};

struct BridgeOptions {
  std::string host = "127.0.0.1";
  int port = 7450;
  std::chrono::milliseconds timeout{30000};
  double schedule_tolerance = 1e-4;
};

// Parses "host:port".
BridgeOptions parse_address(const std::string& address);

// ScoreProvider backed by a remote bridge process. Tensors travel as f32, so
// results are rounded to single precision.
class RemoteProvider final : public ScoreProvider {
 public:
  explicit RemoteProvider(BridgeOptions options);
  ~RemoteProvider() override;
  RemoteProvider(const RemoteProvider&) = delete;
  RemoteProvider& operator=(const RemoteProvider&) = delete;

  const BridgeInfo& info() const { return info_; }
  // True once any response was flagged nondeterministic.
  bool nondeterministic() const { return nondeterministic_; }

  std::string name() const override;
  std::vector<Resolution> stage_resolutions() const override { return info_.stages; }
  Image base_predict(const Image& z, int t, const Conditioning& cond) override;
  Image super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s, const Conditioning& cond) override;

 private:
  Frame exchange(const Frame& request);
  Image prediction(const Frame& response, const TensorShape& expected);

  BridgeOptions options_;
  int fd_ = -1;
  BridgeInfo info_;
  bool nondeterministic_ = false;
};

// Handshake plus one base and (if present) one super-resolution round trip
// with zero inputs; reports what was checked.
struct ProtocolReport {
  BridgeInfo info;
  std::vector<std::string> checks;
};
ProtocolReport check_bridge(const BridgeOptions& options);

}  // namespace csdpaint
