#include "evr/envd.hpp"

#include <cstring>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace evr {

namespace wire {

void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(std::uint8_t(v & 0xff));
    b.push_back(std::uint8_t(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}
void put_i32(std::vector<std::uint8_t>& b, std::int32_t v) { put_u32(b, std::uint32_t(v)); }
void put_f32(std::vector<std::uint8_t>& b, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
}
void put_f64(std::vector<std::uint8_t>& b, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) b.push_back(std::uint8_t((bits >> (8 * i)) & 0xff));
}
void put_str(std::vector<std::uint8_t>& b, const std::string& s) {
    put_u32(b, std::uint32_t(s.size()));
    b.insert(b.end(), s.begin(), s.end());
}

std::uint8_t Reader::u8() {
    if (off_ + 1 > b_->size()) throw ParseError("payload overrun reading u8", off_);
    return (*b_)[off_++];
}
std::uint16_t Reader::u16() {
    if (off_ + 2 > b_->size()) throw ParseError("payload overrun reading u16", off_);
    std::uint16_t v = std::uint16_t((*b_)[off_] | ((*b_)[off_ + 1] << 8));
    off_ += 2;
    return v;
}
std::uint32_t Reader::u32() {
    if (off_ + 4 > b_->size()) throw ParseError("payload overrun reading u32", off_);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t((*b_)[off_ + std::size_t(i)]) << (8 * i);
    off_ += 4;
    return v;
}
std::int32_t Reader::i32() { return std::int32_t(u32()); }
float Reader::f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}
double Reader::f64() {
    if (off_ + 8 > b_->size()) throw ParseError("payload overrun reading f64", off_);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t((*b_)[off_ + std::size_t(i)]) << (8 * i);
    off_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}
std::string Reader::str() {
    std::uint32_t n = u32();
    if (off_ + n > b_->size()) throw ParseError("payload overrun reading string", off_);
    std::string s(reinterpret_cast<const char*>(b_->data()) + off_, n);
    off_ += n;
    return s;
}

std::vector<std::uint8_t> frame_bytes(const Message& m) {
    std::vector<std::uint8_t> out;
    put_u32(out, std::uint32_t(1 + m.payload.size()));
    out.push_back(m.opcode);
    out.insert(out.end(), m.payload.begin(), m.payload.end());
    return out;
}

namespace {

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
    while (n > 0) {
        // MSG_NOSIGNAL: a peer that hung up must surface as IoError, not SIGPIPE
        ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
        if (w <= 0) throw IoError("socket write failed");
        p += w;
        n -= std::size_t(w);
    }
}

void read_all(int fd, std::uint8_t* p, std::size_t n) {
    while (n > 0) {
        ssize_t r = ::read(fd, p, n);
        if (r == 0) throw IoError("connection closed");
        if (r < 0) throw IoError("socket read failed");
        p += r;
        n -= std::size_t(r);
    }
}

} // namespace

void write_message(int fd, const Message& m) {
    auto bytes = frame_bytes(m);
    write_all(fd, bytes.data(), bytes.size());
}

Message read_message(int fd) {
    std::uint8_t lenb[4];
    read_all(fd, lenb, 4);
    std::uint32_t len = std::uint32_t(lenb[0]) | (std::uint32_t(lenb[1]) << 8) |
                        (std::uint32_t(lenb[2]) << 16) | (std::uint32_t(lenb[3]) << 24);
    if (len == 0) throw IoError("zero-length message");
    if (len > kMaxMessageBytes) throw IoError("oversized message");
    Message m;
    m.payload.resize(len - 1);
    read_all(fd, &m.opcode, 1);
    if (!m.payload.empty()) read_all(fd, m.payload.data(), m.payload.size());
    return m;
}

Message encode_obs(const Obs& o) {
    Message m;
    m.opcode = OBS;
    auto& b = m.payload;
    put_i32(b, o.episode);
    put_u8(b, o.t);
    put_u8(b, o.done ? 1 : 0);
    put_u16(b, std::uint16_t(o.frame.width));
    put_u16(b, std::uint16_t(o.frame.height));
    const std::size_t n = std::size_t(o.frame.width) * o.frame.height;
    for (std::size_t i = 0; i < n; ++i) put_u8(b, std::uint8_t(std::int8_t(o.frame.category[i])));
    for (std::size_t i = 0; i < n; ++i) put_i32(b, o.frame.instance_id[i]);
    for (std::size_t i = 0; i < n; ++i) put_f32(b, o.frame.depth[i]);
    put_f64(b, o.b0.x0);
    put_f64(b, o.b0.y0);
    put_f64(b, o.b0.x1);
    put_f64(b, o.b0.y1);
    return m;
}

Obs decode_obs(const Message& m) {
    if (m.opcode != OBS) throw ValidationError("decode_obs: not an OBS message");
    Reader r(m.payload);
    Obs o;
    o.episode = r.i32();
    o.t = r.u8();
    o.done = r.u8() != 0;
    const int w = r.u16(), h = r.u16();
    o.frame = Frame(w, h);
    const std::size_t n = std::size_t(w) * h;
    for (std::size_t i = 0; i < n; ++i) o.frame.category[i] = std::int8_t(r.u8());
    for (std::size_t i = 0; i < n; ++i) o.frame.instance_id[i] = r.i32();
    for (std::size_t i = 0; i < n; ++i) o.frame.depth[i] = r.f32();
    o.b0.x0 = r.f64();
    o.b0.y0 = r.f64();
    o.b0.x1 = r.f64();
    o.b0.y1 = r.f64();
    if (r.remaining() != 0) throw ParseError("OBS payload has trailing bytes", 0);
    return o;
}

Message encode_err(std::uint8_t code, const std::string& text) {
    Message m;
    m.opcode = ERR;
    put_u8(m.payload, code);
    put_str(m.payload, text);
    return m;
}

std::pair<std::uint8_t, std::string> decode_err(const Message& m) {
    if (m.opcode != ERR) throw ValidationError("decode_err: not an ERR message");
    Reader r(m.payload);
    std::uint8_t code = r.u8();
    std::string text = r.str();
    return {code, text};
}

Message encode_truth(const TruthRecord& t) {
    Message m;
    m.opcode = TRUTH;
    auto& b = m.payload;
    put_i32(b, t.episode);
    put_u8(b, std::uint8_t(t.category));
    put_f64(b, t.visibility);
    put_f64(b, t.amodal_box.x0);
    put_f64(b, t.amodal_box.y0);
    put_f64(b, t.amodal_box.x1);
    put_f64(b, t.amodal_box.y1);
    put_u16(b, std::uint16_t(t.amodal_mask.width));
    put_u16(b, std::uint16_t(t.amodal_mask.height));
    b.insert(b.end(), t.amodal_mask.on.begin(), t.amodal_mask.on.end());
    put_u16(b, std::uint16_t(t.visible_mask.width));
    put_u16(b, std::uint16_t(t.visible_mask.height));
    b.insert(b.end(), t.visible_mask.on.begin(), t.visible_mask.on.end());
    return m;
}

TruthRecord decode_truth(const Message& m) {
    if (m.opcode != TRUTH) throw ValidationError("decode_truth: not a TRUTH message");
    Reader r(m.payload);
    TruthRecord t;
    t.episode = r.i32();
    t.category = std::int8_t(r.u8());
    t.visibility = r.f64();
    t.amodal_box.x0 = r.f64();
    t.amodal_box.y0 = r.f64();
    t.amodal_box.x1 = r.f64();
    t.amodal_box.y1 = r.f64();
    t.amodal_mask.width = r.u16();
    t.amodal_mask.height = r.u16();
    t.amodal_mask.on.resize(std::size_t(t.amodal_mask.width) * t.amodal_mask.height);
    for (auto& v : t.amodal_mask.on) v = r.u8();
    t.visible_mask.width = r.u16();
    t.visible_mask.height = r.u16();
    t.visible_mask.on.resize(std::size_t(t.visible_mask.width) * t.visible_mask.height);
    for (auto& v : t.visible_mask.on) v = r.u8();
    if (r.remaining() != 0) throw ParseError("TRUTH payload has trailing bytes", 0);
    return t;
}

} // namespace wire

// ---- server ----

struct EnvSession {
    bool active = false;
    bool done = false;
    const Episode* ep = nullptr;
    const Scene* scene = nullptr;
    const OccupancyGrid* grid = nullptr;
    Pose pose;
    int t = 0;
};

EnvServer::EnvServer(const Dataset& ds, const std::string& host, int port) : ds_(&ds) {
    for (const Episode& ep : ds.episodes) by_id_[ep.id] = &ep;
    for (const Scene& sc : ds.scenes)
        grids_.emplace(sc.id, rasterize_occupancy(sc, ds.episode_config.grid_resolution,
                                                  ds.episode_config.agent_radius));

    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw IoError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(std::uint16_t(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw IoError("bad bind address: " + host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw IoError("bind failed on " + host + ":" + std::to_string(port));
    }
    if (::listen(listen_fd_, 16) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw IoError("listen failed");
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof bound;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = int(ntohs(bound.sin_port));
}

EnvServer::~EnvServer() { stop(); }

void EnvServer::run() {
    for (;;) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) break; // listen socket closed by stop()
        std::lock_guard<std::mutex> lock(threads_mu_);
        threads_.emplace_back([this, fd]() { handle_connection(fd); });
    }
}

void EnvServer::stop() {
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    std::lock_guard<std::mutex> lock(threads_mu_);
    for (auto& t : threads_)
        if (t.joinable()) t.join();
    threads_.clear();
}

void EnvServer::handle_connection(int fd) {
    EnvSession st;
    for (;;) {
        wire::Message m;
        try {
            m = wire::read_message(fd);
        } catch (const IoError&) {
            break;
        }
        if (m.opcode == wire::CLOSE) {
            wire::Message bye;
            bye.opcode = wire::CLOSE;
            try {
                wire::write_message(fd, bye);
            } catch (const IoError&) {
            }
            break;
        }
        wire::Message resp = dispatch(st, m);
        try {
            wire::write_message(fd, resp);
        } catch (const IoError&) {
            break;
        }
    }
    ::close(fd);
}

wire::Message EnvServer::dispatch(EnvSession& st, const wire::Message& m) {
    using namespace wire;
    switch (m.opcode) {
        case RESET: {
            if (m.payload.size() != 4)
                return encode_err(ERR_MALFORMED, "RESET payload must be a 4-byte episode id");
            if (st.active && !st.done)
                return encode_err(ERR_MALFORMED,
                                  "RESET while an episode is in progress (one episode at a time)");
            Reader r(m.payload);
            const int id = r.i32();
            auto it = by_id_.find(id);
            if (it == by_id_.end())
                return encode_err(ERR_UNKNOWN_EPISODE, "unknown episode " + std::to_string(id));
            st.ep = it->second;
            st.scene = &ds_->scene_by_id(st.ep->scene_id);
            st.grid = &grids_.at(st.ep->scene_id);
            st.pose = st.ep->spawn;
            st.t = 0;
            st.active = true;
            st.done = ds_->episode_config.T == 0;
            Obs o;
            o.episode = id;
            o.t = 0;
            o.done = st.done;
            o.frame = render_frame(*st.scene, st.pose, ds_->camera);
            o.b0 = st.ep->b0;
            return encode_obs(o);
        }
        case STEP: {
            if (m.payload.size() != 1)
                return encode_err(ERR_MALFORMED, "STEP payload must be a 1-byte action code");
            if (!st.active)
                return encode_err(ERR_MALFORMED, "STEP before RESET");
            const std::uint8_t code = m.payload[0];
            if (code >= kNumActions)
                return encode_err(ERR_MALFORMED,
                                  "action code " + std::to_string(int(code)) + " out of range");
            if (st.done) return encode_err(ERR_EPISODE_OVER, "episode horizon reached");
            st.pose = step(st.pose, Action(code), *st.grid, ds_->episode_config);
            ++st.t;
            st.done = st.t >= ds_->episode_config.T;
            Obs o;
            o.episode = st.ep->id;
            o.t = std::uint8_t(st.t);
            o.done = st.done;
            o.frame = render_frame(*st.scene, st.pose, ds_->camera);
            o.b0 = st.ep->b0;
            return encode_obs(o);
        }
        case TRUTH: {
            if (m.payload.size() != 4)
                return encode_err(ERR_MALFORMED, "TRUTH payload must be a 4-byte episode id");
            Reader r(m.payload);
            const int id = r.i32();
            auto it = by_id_.find(id);
            if (it == by_id_.end())
                return encode_err(ERR_UNKNOWN_EPISODE, "unknown episode " + std::to_string(id));
            const Episode& ep = *it->second;
            if (!ep.evaluable)
                return encode_err(ERR_TRUTH_WITHHELD,
                                  "truth withheld for episode " + std::to_string(id));
            const Scene& sc = ds_->scene_by_id(ep.scene_id);
            const ObjectInstance* obj = sc.find_object(ep.target_id);
            TruthRecord t;
            t.episode = id;
            t.category = std::int8_t(int(obj->category));
            t.visibility = ep.truth.visibility;
            t.amodal_box = ep.truth.amodal_box;
            t.amodal_mask = ep.truth.amodal_mask;
            t.visible_mask = ep.truth.visible_mask;
            return encode_truth(t);
        }
        default:
            return encode_err(ERR_UNKNOWN_OPCODE,
                              "opcode " + std::to_string(int(m.opcode)) + " is not a request");
    }
}

// ---- client ----

EnvClient::EnvClient(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw IoError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(std::uint16_t(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        fd_ = -1;
        throw IoError("bad address: " + host);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw IoError("connect failed to " + host + ":" + std::to_string(port));
    }
}

EnvClient::~EnvClient() {
    if (fd_ >= 0) ::close(fd_);
}

wire::Message EnvClient::request(const wire::Message& m) {
    wire::write_message(fd_, m);
    return wire::read_message(fd_);
}

} // namespace evr
