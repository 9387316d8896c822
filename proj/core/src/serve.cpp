#include "d3m/serve.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "d3m/errors.hpp"
#include "d3m/log.hpp"

namespace d3m::serve {

using json = nlohmann::json;

namespace {

class BoundedQueue {
public:
    explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

    void push(std::string line) {
        std::unique_lock<std::mutex> lock(mutex_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_; });
        items_.push_back(std::move(line));
        not_empty_.notify_one();
    }

    void close() {
        std::lock_guard<std::mutex> lock(mutex_);
        closed_ = true;
        not_empty_.notify_all();
    }

    bool pop(std::string& out) {
        std::unique_lock<std::mutex> lock(mutex_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return false;
        out = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return true;
    }

private:
    size_t capacity_;
    std::deque<std::string> items_;
    bool closed_ = false;
    std::mutex mutex_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
};

int64_t wall_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string error_line(size_t lineno, const std::string& message) {
    json j;
    j["error"] = message;
    j["line"] = lineno;
    return j.dump();
}

// Parse one input line and feed the monitor; emits at most one output line.
void consume_line(MonitorStream& monitor, const std::string& line, size_t lineno,
                  const ServeOptions& options, std::ostream& out, ServeSummary& summary) {
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) return;
    ++summary.lines_in;
    nn::Vec x;
    try {
        const json j = json::parse(line);
        if (!j.contains("x") || !j["x"].is_array()) {
            throw InputError("expected {\"x\": [numbers]}");
        }
        x = j["x"].get<nn::Vec>();
        for (double v : x) {
            if (!std::isfinite(v)) throw InputError("non-finite feature value");
        }
        if (!monitor.model().stats.empty()) {
            data::apply_feature_stats(x, monitor.model().stats);
        }
        const auto verdict = monitor.push(x);
        if (verdict.has_value()) {
            MonitorVerdict v = *verdict;
            if (options.wall_clock_ts) v.ts_ms = wall_clock_ms();
            out << verdict_to_ndjson(v) << '\n' << std::flush;
            ++summary.verdicts;
        }
    } catch (const json::exception& e) {
        out << error_line(lineno, std::string("bad json: ") + e.what()) << '\n' << std::flush;
        ++summary.errors;
    } catch (const std::invalid_argument& e) {
        out << error_line(lineno, e.what()) << '\n' << std::flush;
        ++summary.errors;
    }
}

} // namespace

ServeSummary run_streams(MonitorStream& monitor, std::istream& in, std::ostream& out,
                         const ServeOptions& options) {
    BoundedQueue queue(options.queue_capacity);
    std::thread reader([&] {
        std::string line;
        while (std::getline(in, line)) queue.push(std::move(line));
        queue.close();
    });

    ServeSummary summary;
    std::string line;
    size_t lineno = 0;
    while (queue.pop(line)) {
        ++lineno;
        consume_line(monitor, line, lineno, options, out, summary);
    }
    reader.join();
    return summary;
}

namespace {

// Minimal line-oriented reader over a socket fd.
class FdLineReader {
public:
    explicit FdLineReader(int fd) : fd_(fd) {}

    bool next(std::string& line) {
        line.clear();
        while (true) {
            for (; pos_ < len_; ++pos_) {
                if (buf_[pos_] == '\n') {
                    ++pos_;
                    return true;
                }
                line.push_back(buf_[pos_]);
            }
            const ssize_t got = ::read(fd_, buf_, sizeof(buf_));
            if (got <= 0) return !line.empty();
            len_ = static_cast<size_t>(got);
            pos_ = 0;
        }
    }

private:
    int fd_;
    char buf_[4096];
    size_t pos_ = 0;
    size_t len_ = 0;
};

void write_all(int fd, const std::string& s) {
    size_t off = 0;
    while (off < s.size()) {
        const ssize_t put = ::write(fd, s.data() + off, s.size() - off);
        if (put <= 0) return;
        off += static_cast<size_t>(put);
    }
}

} // namespace

ServeSummary run_tcp(MonitorStream& monitor, uint16_t port, const ServeOptions& options,
                     size_t max_connections) {
    const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw IoError("serve: cannot create socket");
    const int one = 1;
    ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listener);
        throw IoError("serve: cannot bind port " + std::to_string(port));
    }
    if (::listen(listener, 1) != 0) {
        ::close(listener);
        throw IoError("serve: cannot listen on port " + std::to_string(port));
    }
    log::info("serve: listening on tcp port " + std::to_string(port));

    ServeSummary total;
    size_t served = 0;
    while (max_connections == 0 || served < max_connections) {
        const int conn = ::accept(listener, nullptr, nullptr);
        if (conn < 0) break;
        FdLineReader reader(conn);
        std::string line;
        size_t lineno = 0;
        std::ostringstream chunk;
        while (reader.next(line)) {
            ++lineno;
            chunk.str("");
            consume_line(monitor, line, lineno, options, chunk, total);
            const std::string outbytes = chunk.str();
            if (!outbytes.empty()) write_all(conn, outbytes);
        }
        ::close(conn);
        ++served;
    }
    ::close(listener);
    return total;
}

} // namespace d3m::serve
