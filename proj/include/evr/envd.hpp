#pragma once
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "evr/episodes.hpp"

namespace evr {

namespace wire {

// Frame format: u32 little-endian length, then `length` bytes beginning with
// a 1-byte opcode.
enum Opcode : std::uint8_t {
    RESET = 1,
    STEP = 2,
    TRUTH = 3,
    CLOSE = 4,
    OBS = 5,
    ERR = 6,
};

enum ErrCode : std::uint8_t {
    ERR_UNKNOWN_OPCODE = 1,
    ERR_UNKNOWN_EPISODE = 2,
    ERR_EPISODE_OVER = 3,
    ERR_MALFORMED = 4,
    ERR_TRUTH_WITHHELD = 5,
};

inline constexpr std::uint32_t kMaxMessageBytes = 16u << 20;

struct Message {
    std::uint8_t opcode = 0;
    std::vector<std::uint8_t> payload;
    bool operator==(const Message&) const = default;
};

// little-endian packing
void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v);
void put_i32(std::vector<std::uint8_t>& b, std::int32_t v);
void put_f32(std::vector<std::uint8_t>& b, float v);
void put_f64(std::vector<std::uint8_t>& b, double v);
void put_str(std::vector<std::uint8_t>& b, const std::string& s);

// Sequential payload reader; throws ParseError on overrun.
class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(&b) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::int32_t i32();
    float f32();
    double f64();
    std::string str();
    std::size_t remaining() const { return b_->size() - off_; }

private:
    const std::vector<std::uint8_t>* b_;
    std::size_t off_ = 0;
};

// Blocking framed io on a connected socket; throws IoError on EOF/short io.
void write_message(int fd, const Message& m);
Message read_message(int fd);

std::vector<std::uint8_t> frame_bytes(const Message& m); // length prefix + body

// ---- payload schemas ----

struct Obs {
    std::int32_t episode = 0;
    std::uint8_t t = 0;
    bool done = false;
    Frame frame;
    BoxF b0;
};

struct TruthRecord {
    std::int32_t episode = 0;
    std::int8_t category = 0;
    double visibility = 0;
    BoxF amodal_box;
    Mask amodal_mask;  // padded canvas
    Mask visible_mask; // core canvas
};

Message encode_obs(const Obs& o);
Obs decode_obs(const Message& m); // throws ParseError / ValidationError
Message encode_err(std::uint8_t code, const std::string& text);
std::pair<std::uint8_t, std::string> decode_err(const Message& m);
Message encode_truth(const TruthRecord& t);
TruthRecord decode_truth(const Message& m);

} // namespace wire

// One-episode-at-a-time session server over TCP. Every connection gets
// confined session state; the dataset is shared read-only.
class EnvServer {
public:
    // port 0 picks an ephemeral port; see port() after construction.
    EnvServer(const Dataset& ds, const std::string& host, int port);
    ~EnvServer();
    EnvServer(const EnvServer&) = delete;
    EnvServer& operator=(const EnvServer&) = delete;

    int port() const { return port_; }
    // Accept loop; returns after stop().
    void run();
    void stop();

private:
    void handle_connection(int fd);
    wire::Message dispatch(struct EnvSession& st, const wire::Message& m);

    const Dataset* ds_;
    std::map<int, const Episode*> by_id_;
    std::map<int, OccupancyGrid> grids_; // built up-front, read-only afterwards
    int listen_fd_ = -1;
    int port_ = 0;
    std::mutex threads_mu_;
    std::vector<std::thread> threads_;
};

// Minimal blocking client for tests and tools.
class EnvClient {
public:
    EnvClient(const std::string& host, int port);
    ~EnvClient();
    EnvClient(const EnvClient&) = delete;
    EnvClient& operator=(const EnvClient&) = delete;

    wire::Message request(const wire::Message& m);
    int fd() const { return fd_; }

private:
    int fd_ = -1;
};

} // namespace evr
