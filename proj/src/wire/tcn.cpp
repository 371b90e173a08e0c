#include "fedqot/wire/tcn.hpp"

#include <condition_variable>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <variant>

#include "fedqot/log.hpp"

namespace fedqot::wire {

namespace {

struct EvConn {
  std::unique_ptr<ByteStream> stream;
};
struct EvMsg {
  uint64_t sid;
  Message msg;
};
struct EvBad {  // reader failed to decode a frame from this session
  uint64_t sid;
  std::string detail;
};
struct EvClosed {
  uint64_t sid;
};
using Event = std::variant<EvConn, EvMsg, EvBad, EvClosed>;

class EventQueue {
 public:
  void push(Event ev) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      q_.push_back(std::move(ev));
    }
    cv_.notify_one();
  }

  // Blocks until an event arrives.
  Event wait() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty(); });
    Event ev = std::move(q_.front());
    q_.pop_front();
    return ev;
  }

  // Blocks until an event arrives or the deadline passes.
  std::optional<Event> wait_until(std::chrono::steady_clock::time_point tp) {
    std::unique_lock<std::mutex> lock(mu_);
    if (!cv_.wait_until(lock, tp, [&] { return !q_.empty(); })) {
      return std::nullopt;
    }
    Event ev = std::move(q_.front());
    q_.pop_front();
    return ev;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> q_;
};

// One connection. The reader thread decodes frames into the coordinator's
// event queue; the writer thread drains the outbox. All protocol decisions
// happen on the coordinator thread.
struct Session {
  uint64_t sid = 0;
  std::shared_ptr<ByteStream> stream;
  std::thread reader;
  std::thread writer;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<uint8_t>> outbox;
  bool close_after_flush = false;

  // Coordinator-owned fields.
  enum class St { kAwaitingHello, kActive, kClosed } st = St::kAwaitingHello;
  std::string ecn_id;
  uint64_t n_samples = 0;

  void push_frame(std::vector<uint8_t> frame) {
    {
      std::lock_guard<std::mutex> lock(mu);
      if (close_after_flush) return;
      outbox.push_back(std::move(frame));
    }
    cv.notify_one();
  }

  void request_close() {
    {
      std::lock_guard<std::mutex> lock(mu);
      close_after_flush = true;
    }
    cv.notify_one();
  }

  void writer_loop() {
    for (;;) {
      std::vector<uint8_t> frame;
      {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return !outbox.empty() || close_after_flush; });
        if (!outbox.empty()) {
          frame = std::move(outbox.front());
          outbox.pop_front();
        } else {
          break;  // close requested and outbox drained
        }
      }
      try {
        stream->write_all(frame.data(), frame.size());
      } catch (const std::exception&) {
        break;
      }
    }
    stream->shutdown();  // unblocks the reader
  }

  void reader_loop(EventQueue* inbox) {
    try {
      for (;;) {
        auto msg = read_message(*stream);
        if (!msg) break;
        inbox->push(EvMsg{sid, std::move(*msg)});
      }
    } catch (const IoError&) {
      // connection dropped; fall through to EvClosed
    } catch (const std::exception& e) {
      inbox->push(EvBad{sid, e.what()});
    }
    inbox->push(EvClosed{sid});
  }
};

class Coordinator {
 public:
  Coordinator(const TcnConfig& cfg, StreamAcceptor& acceptor)
      : cfg_(cfg), acceptor_(acceptor) {}

  TcnOutcome run() {
    cfg_.model_spec.validate();
    cfg_.hyperparams.validate();
    if (cfg_.expected_ecns < 1) {
      throw UsageError("expected_ecns must be >= 1");
    }

    accept_thread_ = std::thread([this] { accept_loop(); });

    TcnOutcome outcome;
    try {
      outcome = train();
    } catch (...) {
      teardown();
      throw;
    }
    teardown();
    return outcome;
  }

 private:
  // ---- threads feeding the inbox ----

  void accept_loop() {
    try {
      while (auto stream = acceptor_.accept()) {
        inbox_.push(EvConn{std::move(stream)});
      }
    } catch (const std::exception& e) {
      log_warn(std::string("tcn accept loop: ") + e.what());
    }
  }

  // ---- coordinator-side helpers ----

  void add_session(std::unique_ptr<ByteStream> stream) {
    auto s = std::make_unique<Session>();
    s->sid = next_sid_++;
    s->stream = std::shared_ptr<ByteStream>(std::move(stream));
    Session* raw = s.get();
    raw->writer = std::thread([raw] { raw->writer_loop(); });
    raw->reader = std::thread([raw, this] { raw->reader_loop(&inbox_); });
    sessions_[raw->sid] = std::move(s);
  }

  Session* find(uint64_t sid) {
    auto it = sessions_.find(sid);
    return it == sessions_.end() ? nullptr : it->second.get();
  }

  void send(Session& s, const Message& msg) {
    if (s.st == Session::St::kClosed) return;
    s.push_frame(encode_frame(msg));
  }

  // Sends an optional final message, then closes the session and removes it
  // from the registry and the current round's expectations.
  void close_session(Session& s, const std::optional<Message>& final_msg) {
    if (s.st == Session::St::kClosed) return;
    if (final_msg) send(s, *final_msg);
    s.request_close();
    s.st = Session::St::kClosed;
    if (!s.ecn_id.empty()) {
      auto it = registered_.find(s.ecn_id);
      if (it != registered_.end() && it->second == s.sid) {
        registered_.erase(it);
        if (in_round_ && !received_.count(s.ecn_id)) {
          expected_.erase(s.ecn_id);
        }
      }
    }
  }

  void broadcast(const Message& msg) {
    const std::vector<uint8_t> frame = encode_frame(msg);
    for (const auto& [id, sid] : registered_) {
      if (Session* s = find(sid); s && s->st == Session::St::kActive) {
        s->push_frame(frame);
      }
    }
  }

  void handle_hello(Session& s, const Hello& h) {
    if (s.st != Session::St::kAwaitingHello) {
      close_session(s, ErrorMsg{"protocol_error", "unexpected HELLO"});
      return;
    }
    std::string reason;
    if (h.protocol_version != kProtocolVersion) {
      reason = "unsupported protocol version";
    } else if (h.ecn_id.empty()) {
      reason = "empty ecn_id";
    } else if (h.schema_hash != cfg_.schema_hash) {
      reason = "schema mismatch";
    } else if (h.n_samples < cfg_.min_samples) {
      reason = "needs at least " + std::to_string(cfg_.min_samples) + " samples";
    } else if (registered_.count(h.ecn_id)) {
      reason = "duplicate ecn_id";
    } else if (registered_.size() >= cfg_.expected_ecns) {
      reason = "training is full";
    }
    if (!reason.empty()) {
      log_warn("rejecting '" + h.ecn_id + "': " + reason);
      close_session(s, Eligible{false, reason});
      return;
    }

    s.st = Session::St::kActive;
    s.ecn_id = h.ecn_id;
    s.n_samples = h.n_samples;
    registered_[h.ecn_id] = s.sid;
    send(s, Eligible{true, ""});
    log_info("registered '" + h.ecn_id + "' (" + std::to_string(h.n_samples) +
             " samples), " + std::to_string(registered_.size()) + "/" +
             std::to_string(cfg_.expected_ecns));

    if (training_started_) {
      // Late (re)joiner: catch it up so it can still serve this round.
      send(s, TrainConfig{cfg_.model_spec, cfg_.hyperparams});
      if (in_round_) {
        send(s, GlobalModel{round_, serialize_params(global_)});
        expected_.insert(h.ecn_id);
      }
    }
  }

  void handle_update(Session& s, const LocalUpdate& u) {
    if (s.st != Session::St::kActive || !training_started_ || !in_round_) {
      close_session(s, ErrorMsg{"protocol_error",
                                "LOCAL_UPDATE outside of an open round"});
      return;
    }
    if (u.round_index < round_) {
      log_warn("ignoring stale update from '" + s.ecn_id + "' for round " +
               std::to_string(u.round_index));
      return;
    }
    if (u.round_index > round_) {
      close_session(s, ErrorMsg{"protocol_error",
                                "LOCAL_UPDATE for a round never broadcast"});
      return;
    }
    if (!expected_.count(s.ecn_id)) {
      log_warn("ignoring update from unexpected '" + s.ecn_id + "'");
      return;
    }
    if (received_.count(s.ecn_id)) {
      log_warn("ignoring duplicate update from '" + s.ecn_id + "'");
      return;
    }
    if (u.n_samples == 0) {
      close_session(s, ErrorMsg{"protocol_error", "n_samples must be >= 1"});
      return;
    }
    ParameterVector params;
    try {
      params = deserialize_params(u.param_blob, cfg_.model_spec);
    } catch (const std::exception& e) {
      close_session(s, ErrorMsg{"bad_update", e.what()});
      return;
    }
    received_[s.ecn_id] = EcnUpdate{s.ecn_id, std::move(params), u.n_samples};
  }

  void handle(Event ev) {
    if (auto* conn = std::get_if<EvConn>(&ev)) {
      add_session(std::move(conn->stream));
      return;
    }
    if (auto* closed = std::get_if<EvClosed>(&ev)) {
      if (Session* s = find(closed->sid)) {
        if (s->st != Session::St::kClosed) {
          log_warn("session of '" +
                   (s->ecn_id.empty() ? std::string("<unregistered>")
                                      : s->ecn_id) +
                   "' dropped");
        }
        close_session(*s, std::nullopt);
      }
      return;
    }
    if (auto* bad = std::get_if<EvBad>(&ev)) {
      if (Session* s = find(bad->sid)) {
        close_session(*s, ErrorMsg{"protocol_error", bad->detail});
      }
      return;
    }
    auto& m = std::get<EvMsg>(ev);
    Session* s = find(m.sid);
    if (!s || s->st == Session::St::kClosed) return;
    if (auto* h = std::get_if<Hello>(&m.msg)) {
      handle_hello(*s, *h);
    } else if (auto* u = std::get_if<LocalUpdate>(&m.msg)) {
      handle_update(*s, *u);
    } else {
      close_session(*s, ErrorMsg{"protocol_error",
                                 "unexpected message type from a client"});
    }
  }

  // ---- the training procedure ----

  TcnOutcome train() {
    TcnOutcome outcome;

    while (registered_.size() < cfg_.expected_ecns) {
      handle(inbox_.wait());
    }

    global_ = init_params(cfg_.model_spec, cfg_.init_seed);
    training_started_ = true;
    broadcast(TrainConfig{cfg_.model_spec, cfg_.hyperparams});

    const Batch eval_batch =
        cfg_.eval_set ? cfg_.eval_set->as_batch() : Batch{};

    for (round_ = 1; round_ <= cfg_.hyperparams.rounds; ++round_) {
      expected_.clear();
      received_.clear();
      for (const auto& [id, sid] : registered_) expected_.insert(id);
      in_round_ = true;
      bool retried = false;
      auto deadline = std::chrono::steady_clock::now() + cfg_.round_deadline;
      broadcast(GlobalModel{round_, serialize_params(global_)});

      for (;;) {
        if (!expected_.empty() && received_.size() == expected_.size()) {
          break;  // everyone answered; close early
        }
        auto ev = inbox_.wait_until(deadline);
        if (!ev) {
          if (!received_.empty()) break;  // drop the stragglers
          if (!retried) {
            retried = true;
            log_warn("round " + std::to_string(round_) +
                     " received nothing by the deadline; retrying once");
            deadline = std::chrono::steady_clock::now() + cfg_.round_deadline;
            broadcast(GlobalModel{round_, serialize_params(global_)});
            continue;
          }
          const std::string err = "round " + std::to_string(round_) +
                                  " received no updates after a retry";
          broadcast(ErrorMsg{"round_failed", err});
          outcome.success = false;
          outcome.error = err;
          outcome.final_params = global_;  // unchanged by the failed round
          return outcome;
        }
        handle(std::move(*ev));
      }

      RoundState state;
      state.round_index = round_;
      state.global_params = global_;
      state.expected = expected_;
      state.received = received_;
      state.deadline = deadline;
      in_round_ = false;
      global_ = close_round(state);

      RoundMetrics m;
      m.round = round_;
      m.mean_local_loss = std::numeric_limits<double>::quiet_NaN();
      m.eval_accuracy = cfg_.eval_set
                            ? evaluate_accuracy(global_, eval_batch)
                            : std::numeric_limits<double>::quiet_NaN();
      outcome.history.push_back(m);
      log_info("round " + std::to_string(round_) + ": " +
               std::to_string(received_.size()) + "/" +
               std::to_string(state.expected.size()) + " updates" +
               (cfg_.eval_set ? ", accuracy " + std::to_string(m.eval_accuracy)
                              : ""));
    }

    if (cfg_.eval_set) {
      outcome.final_accuracy = evaluate_accuracy(global_, eval_batch);
    }
    broadcast(Done{outcome.final_accuracy});
    outcome.success = true;
    outcome.final_params = std::move(global_);
    return outcome;
  }

  void teardown() {
    acceptor_.close();
    for (auto& [sid, s] : sessions_) {
      s->request_close();
    }
    for (auto& [sid, s] : sessions_) {
      if (s->writer.joinable()) s->writer.join();
      if (s->reader.joinable()) s->reader.join();
    }
    if (accept_thread_.joinable()) accept_thread_.join();
  }

  TcnConfig cfg_;
  StreamAcceptor& acceptor_;
  EventQueue inbox_;
  std::thread accept_thread_;

  uint64_t next_sid_ = 1;
  std::map<uint64_t, std::unique_ptr<Session>> sessions_;
  std::map<std::string, uint64_t> registered_;  // ecn_id -> sid

  bool training_started_ = false;
  bool in_round_ = false;
  uint32_t round_ = 0;
  ParameterVector global_;
  std::set<std::string> expected_;
  std::map<std::string, EcnUpdate> received_;
};

}  // namespace

TcnOutcome tcn_serve(const TcnConfig& config, StreamAcceptor& acceptor) {
  Coordinator coord(config, acceptor);
  return coord.run();
}

}  // namespace fedqot::wire
