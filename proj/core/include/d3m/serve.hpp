#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "d3m/monitor.hpp"

namespace d3m::serve {

// NDJSON line protocol. Input lines are {"x": [floats]}; every full window of
// m inputs emits one verdict line in the MonitorVerdict schema. A malformed
// line produces an {"error": ...} line and the loop continues.
//
// One reader thread feeds a bounded queue; the consumer parses, monitors and
// writes. Backpressure blocks the reader when the queue is full.
struct ServeOptions {
    size_t queue_capacity = 1024;
    bool wall_clock_ts = false; // stamp verdicts with wall-clock ms
};

struct ServeSummary {
    size_t lines_in = 0;
    size_t verdicts = 0;
    size_t errors = 0;
};

ServeSummary run_streams(MonitorStream& monitor, std::istream& in, std::ostream& out,
                         const ServeOptions& options);

// TCP transport: listens on the port and serves one connection at a time with
// the same line protocol. Returns after `max_connections` clients have
// disconnected (0 = serve forever).
ServeSummary run_tcp(MonitorStream& monitor, uint16_t port, const ServeOptions& options,
                     size_t max_connections = 0);

} // namespace d3m::serve
