#include "csdpaint/bridge.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/errors.hpp"

namespace csdpaint {

std::string to_string(MessageType type) {
  switch (type) {
    case MessageType::handshake: return "handshake";
    case MessageType::base_predict: return "base_predict";
    case MessageType::super_predict: return "super_predict";
    case MessageType::error: return "error";
  }
  return "type " + std::to_string(static_cast<int>(type));
}

void Frame::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = value;
      return;
    }
  }
  header.emplace_back(key, value);
}

std::optional<std::string> Frame::get(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string Frame::require(const std::string& key) const {
  auto v = get(key);
  if (!v) throw ProviderError(to_string(type) + " frame is missing header '" + key + "'");
  return *v;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 == s.size()) throw ProviderError("malformed frame: dangling escape in header");
    const char next = s[++i];
    if (next == '\\') {
      out += '\\';
    } else if (next == 'n') {
      out += '\n';
    } else {
      throw ProviderError(std::string("malformed frame: unknown escape \\") + next);
    }
  }
  return out;
}

bool known_type(std::uint8_t t) { return t <= 2 || t == 255; }

int parse_int(const std::string& text, const std::string& what) {
  int v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ProviderError("bad integer for " + what + ": '" + text + "'");
  return v;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void send_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw ProviderError(std::string("bridge send failed: ") + std::strerror(errno));
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
}

// Returns false on end of stream before any byte was read.
bool recv_all(int fd, std::uint8_t* data, std::size_t n, bool allow_eof) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, data + got, n - got, 0);
    if (k == 0) {
      if (allow_eof && got == 0) return false;
      throw ProviderError("bridge closed the connection mid-frame");
    }
    if (k < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw ProviderError("bridge timed out");
      throw ProviderError(std::string("bridge receive failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  ByteWriter w;
  w.put_u32(0);
  w.put_u8(static_cast<std::uint8_t>(frame.type));
  for (const auto& [k, v] : frame.header) {
    if (k.empty() || k.find('=') != std::string::npos || k.find('\n') != std::string::npos) {
      throw ProviderError("invalid header key '" + k + "'");
    }
    w.put_bytes(k);
    w.put_bytes("=");
    w.put_bytes(escape(v));
    w.put_bytes("\n");
  }
  w.put_bytes("\n");
  for (float f : frame.payload) w.put_f32(f);
  auto& bytes = w.bytes();
  const std::size_t body = bytes.size() - 4;
  if (body > kMaxFrameBytes) throw ProviderError("frame too large");
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<std::uint8_t>(body >> (8 * i));
  return bytes;
}

Frame decode_frame(std::span<const std::uint8_t> body) {
  if (body.empty()) throw ProviderError("malformed frame: empty body");
  Frame frame;
  const std::uint8_t type = body[0];
  if (!known_type(type)) throw ProviderError("malformed frame: unknown message type " + std::to_string(type));
  frame.type = static_cast<MessageType>(type);
  std::size_t pos = 1;
  while (true) {
    std::size_t eol = pos;
    while (eol < body.size() && body[eol] != '\n') ++eol;
    if (eol == body.size()) throw ProviderError("malformed frame: header is not terminated by an empty line");
    const std::string line(reinterpret_cast<const char*>(body.data() + pos), eol - pos);
    pos = eol + 1;
    if (line.empty()) break;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ProviderError("malformed frame: bad header line '" + line + "'");
    frame.header.emplace_back(line.substr(0, eq), unescape(line.substr(eq + 1)));
  }
  const std::size_t rest = body.size() - pos;
  if (rest % 4 != 0) throw ProviderError("malformed frame: payload is not a whole number of f32 values");
  ByteReader r(body.subspan(pos));
  frame.payload.resize(rest / 4);
  for (float& f : frame.payload) f = r.get_f32();
  return frame;
}

std::string format_shape(const TensorShape& shape) {
  return std::to_string(shape.channels) + "," + std::to_string(shape.resolution.height) + "," +
         std::to_string(shape.resolution.width);
}

TensorShape parse_shape(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw ProviderError("bad shape '" + text + "' (expected C,H,W)");
  TensorShape s{parse_int(parts[0], "shape"), {parse_int(parts[1], "shape"), parse_int(parts[2], "shape")}};
  if (s.channels < 1 || s.resolution.height < 1 || s.resolution.width < 1) {
    throw ProviderError("bad shape '" + text + "'");
  }
  return s;
}

std::string format_resolutions(std::span<const Resolution> res) {
  std::string out;
  for (std::size_t i = 0; i < res.size(); ++i) {
    if (i) out += ",";
    out += to_string(res[i]);
  }
  return out;
}

std::vector<Resolution> parse_resolutions(const std::string& text) {
  std::vector<Resolution> out;
  for (const auto& item : split(text, ',')) {
    const auto hw = split(item, 'x');
    if (hw.size() != 2) throw ProviderError("bad resolution '" + item + "' (expected HxW)");
    out.push_back({parse_int(hw[0], "resolution"), parse_int(hw[1], "resolution")});
  }
  return out;
}

void append_image(std::vector<float>& payload, const Image& img) {
  for (double v : img.data()) payload.push_back(static_cast<float>(v));
}

Image image_from_payload(std::span<const float> payload, const TensorShape& shape) {
  if (payload.size() != shape.size()) {
    throw ProviderError("payload has " + std::to_string(payload.size()) + " values, shape " + format_shape(shape) +
                        " needs " + std::to_string(shape.size()));
  }
  Image img(shape.channels, shape.resolution);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = payload[i];
  return img;
}

void write_frame(int fd, const Frame& frame) {
  const auto bytes = encode_frame(frame);
  send_all(fd, bytes.data(), bytes.size());
}

std::optional<Frame> read_frame(int fd) {
  std::uint8_t prefix[4];
  if (!recv_all(fd, prefix, 4, true)) return std::nullopt;
  const std::uint32_t n = ByteReader(prefix).get_u32();
  if (n == 0 || n > kMaxFrameBytes) throw ProviderError("malformed frame: length " + std::to_string(n));
  std::vector<std::uint8_t> body(n);
  recv_all(fd, body.data(), n, false);
  return decode_frame(body);
}

BridgeOptions parse_address(const std::string& address) {
  const std::size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw ConfigError("provider.address", "expected host:port, got '" + address + "'");
  }
  BridgeOptions opt;
  opt.host = address.substr(0, colon);
  try {
    opt.port = parse_int(address.substr(colon + 1), "port");
  } catch (const ProviderError&) {
    throw ConfigError("provider.address", "bad port in '" + address + "'");
  }
  if (opt.port < 1 || opt.port > 65535) throw ConfigError("provider.address", "port out of range");
  return opt;
}

// ---------------------------------------------------------------------------

namespace {

int connect_to(const BridgeOptions& opt) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(opt.port);
  if (const int rc = ::getaddrinfo(opt.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ProviderError("cannot resolve bridge host '" + opt.host + "': " + ::gai_strerror(rc));
  }
  int fd = -1;
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    timeval tv{};
    tv.tv_sec = static_cast<long>(opt.timeout.count() / 1000);
    tv.tv_usec = static_cast<long>((opt.timeout.count() % 1000) * 1000);
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw ProviderError("cannot connect to bridge at " + opt.host + ":" + port + ": " + last_error);
  }
  return fd;
}

BridgeInfo parse_handshake(const Frame& f, double tolerance) {
  BridgeInfo info;
  const int n = parse_int(f.require("stages"), "stages");
  info.stages = parse_resolutions(f.require("resolutions"));
  if (n < 1 || static_cast<int>(info.stages.size()) != n) {
    throw ProviderError("handshake lists " + std::to_string(info.stages.size()) + " resolutions for " +
                        std::to_string(n) + " stages");
  }
  const int T = parse_int(f.require("T"), "T");
  if (T < 1) throw ProviderError("handshake T must be >= 1");
  const TensorShape expected{2, {1, T + 1}};
  const TensorShape shape = parse_shape(f.require("shape"));
  if (shape != expected) {
    throw ProviderError("handshake schedule shape " + format_shape(shape) + ", expected " + format_shape(expected));
  }
  if (f.payload.size() != expected.size()) throw ProviderError("handshake payload size mismatch");
  std::vector<double> alpha(f.payload.begin(), f.payload.begin() + T + 1);
  std::vector<double> sigma(f.payload.begin() + T + 1, f.payload.end());
  info.schedule = schedule_from_tables(std::move(alpha), std::move(sigma), tolerance);
  info.model = f.get("model").value_or("");
  return info;
}

void put_conditioning(Frame& f, const Conditioning& cond) {
  f.set("prompt", cond.prompt);
  if (cond.view) {
    const Camera& c = *cond.view;
    f.set("view", format_double(c.azimuth) + "," + format_double(c.elevation) + "," + format_double(c.radius) +
                      "," + format_double(c.fov_y));
  }
  f.set("background", format_double(cond.background[0]) + "," + format_double(cond.background[1]) + "," +
                          format_double(cond.background[2]));
}

}  // namespace

RemoteProvider::RemoteProvider(BridgeOptions options) : options_(std::move(options)) {
  fd_ = connect_to(options_);
  try {
    Frame hello;
    hello.type = MessageType::handshake;
    hello.set("protocol", "1");
    const Frame reply = exchange(hello);
    info_ = parse_handshake(reply, options_.schedule_tolerance);
  } catch (...) {
    ::close(fd_);
    throw;
  }
}

RemoteProvider::~RemoteProvider() {
  if (fd_ >= 0) ::close(fd_);
}

std::string RemoteProvider::name() const {
  return "bridge(" + options_.host + ":" + std::to_string(options_.port) + ")";
}

Frame RemoteProvider::exchange(const Frame& request) {
  write_frame(fd_, request);
  auto reply = read_frame(fd_);
  if (!reply) throw ProviderError("bridge closed the connection");
  if (reply->type == MessageType::error) {
    throw ProviderError("bridge error [" + reply->get("code").value_or("?") +
                        "]: " + reply->get("message").value_or("(no message)"));
  }
  if (reply->type != request.type) {
    throw ProviderError("bridge answered " + to_string(request.type) + " with " + to_string(reply->type));
  }
  return std::move(*reply);
}

Image RemoteProvider::prediction(const Frame& response, const TensorShape& expected) {
  const TensorShape shape = parse_shape(response.require("shape"));
  if (shape != expected) {
    throw ProviderError("bridge returned shape " + format_shape(shape) + ", expected " + format_shape(expected));
  }
  if (response.get("nondeterministic").value_or("0") == "1") nondeterministic_ = true;
  return image_from_payload(response.payload, shape);
}

Image RemoteProvider::base_predict(const Image& z, int t, const Conditioning& cond) {
  Frame f;
  f.type = MessageType::base_predict;
  const TensorShape shape{z.channels(), z.resolution()};
  f.set("t", std::to_string(t));
  f.set("shape", format_shape(shape));
  put_conditioning(f, cond);
  append_image(f.payload, z);
  return prediction(exchange(f), shape);
}

Image RemoteProvider::super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s,
                                    const Conditioning& cond) {
  if (stage < 1 || stage >= static_cast<int>(info_.stages.size())) {
    throw ProviderError("bridge has no super-resolution stage " + std::to_string(stage));
  }
  Frame f;
  f.type = MessageType::super_predict;
  const TensorShape shape{z_hi.channels(), z_hi.resolution()};
  f.set("stage", std::to_string(stage));
  f.set("t", std::to_string(t));
  f.set("s", std::to_string(s));
  f.set("shape", format_shape(shape));
  f.set("shape_lo", format_shape({z_lo.channels(), z_lo.resolution()}));
  put_conditioning(f, cond);
  append_image(f.payload, z_hi);
  append_image(f.payload, z_lo);
  return prediction(exchange(f), shape);
}

ProtocolReport check_bridge(const BridgeOptions& options) {
  ProtocolReport report;
  RemoteProvider provider(options);
  report.info = provider.info();
  report.checks.push_back("handshake: " + std::to_string(report.info.stages.size()) + " stages (" +
                          format_resolutions(report.info.stages) + "), T=" + std::to_string(report.info.schedule.T));
  Conditioning cond;
  cond.prompt = "protocol check";
  const int t = std::max(1, report.info.schedule.T / 2);
  const Image z0(3, report.info.stages[0]);
  const Image e0 = provider.base_predict(z0, t, cond);
  if (!all_finite(e0)) throw ProviderError("base_predict returned non-finite values");
  report.checks.push_back("base_predict: " + format_shape({3, report.info.stages[0]}));
  if (report.info.stages.size() > 1) {
    const Image z1(3, report.info.stages[1]);
    const Image e1 = provider.super_predict(1, z1, t, z0, std::max(1, t / 2), cond);
    if (!all_finite(e1)) throw ProviderError("super_predict returned non-finite values");
    report.checks.push_back("super_predict: " + format_shape({3, report.info.stages[1]}));
  }
  if (provider.nondeterministic()) report.checks.push_back("note: bridge reports nondeterministic outputs");
  return report;
}

}  // namespace csdpaint
