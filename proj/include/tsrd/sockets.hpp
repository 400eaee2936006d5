#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "tsrd/io.hpp"
#include "tsrd/messages.hpp"
#include "tsrd/pipeline.hpp"

namespace tsrd {

struct SocketError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      close_();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { close_(); }
  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  void close_() {
    if (fd_ >= 0) ::close(fd_);
  }
  int fd_ = -1;
};

inline void send_line(int fd, const std::string& line) {
  std::string framed = line + "\n";
  std::size_t off = 0;
  while (off < framed.size()) {
    const ssize_t k = ::send(fd, framed.data() + off, framed.size() - off, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw SocketError(std::string("send failed: ") + std::strerror(errno));
    }
    off += std::size_t(k);
  }
}

class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}
  //! Blocking read of one newline-framed record; empty optional on EOF.
  std::optional<std::string> read_line() {
    for (;;) {
      const auto pos = buf_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buf_.substr(0, pos);
        buf_.erase(0, pos + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t k = ::recv(fd_, chunk, sizeof chunk, 0);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw SocketError(std::string("recv failed: ") + std::strerror(errno));
      }
      if (k == 0) return std::nullopt;
      buf_.append(chunk, std::size_t(k));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

}  // namespace detail

//! Fusion center for the multi-process mode: listens on loopback, spawns one
//! worker process per partition, and drives the two collection barriers.
//! Workers recompute their own row subsets from the shared (seed, n, b) plan,
//! so only supports and intervals cross the wire.
class SocketFusionCenter {
 public:
  SocketFusionCenter(std::string worker_exe, std::string dataset_path, PipelineConfig cfg)
      : exe_(std::move(worker_exe)), dataset_(std::move(dataset_path)), cfg_(std::move(cfg)) {}

  PipelineResult run(const Matrix& X, const Vector& y) {
    cfg_.validate();
    PipelineResult res;
    const long n = X.rows();
    const int p = int(X.cols());
    res.plan = plan_partitions(n, cfg_.b, cfg_.k_s_hint, p, cfg_.seed);
    const int s = int(res.plan.s);

    detail::Fd listener(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener.valid()) throw SocketError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw SocketError("bind() failed");
    socklen_t alen = sizeof addr;
    ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&addr), &alen);
    const int port = ntohs(addr.sin_port);
    if (::listen(listener.get(), s) != 0) throw SocketError("listen() failed");

    std::vector<pid_t> children;
    for (int i = 0; i < s; ++i) children.push_back(spawn_worker(i, port));

    std::vector<detail::Fd> conns;
    std::map<int, int> conn_of_partition;  // partition_id -> index into conns
    std::map<int, NodeMessage> support_msgs;
    // first barrier: one support_report per worker, any arrival order
    for (int i = 0; i < s; ++i) {
      detail::Fd c(::accept(listener.get(), nullptr, nullptr));
      if (!c.valid()) throw SocketError("accept() failed");
      detail::LineReader reader(c.get());
      const auto line = reader.read_line();
      if (!line) throw SocketError("worker closed before reporting");
      const NodeMessage m = NodeMessage::parse(*line);
      if (m.kind != MessageKind::support_report)
        throw SocketError("expected support_report, got " + to_string(m.kind));
      conn_of_partition[m.partition_id] = int(conns.size());
      support_msgs[m.partition_id] = m;
      conns.push_back(std::move(c));
    }

    std::vector<std::vector<int>> supports;
    res.stage1.resize(std::size_t(s));
    for (const auto& [pid, m] : support_msgs) {
      Stage1Result r;
      r.partition_id = pid;
      if (m.payload.contains("error")) {
        r.ok = false;
        r.error = m.payload.at("error").get<std::string>();
        ++res.manifest.stage1_failures;
        res.manifest.partition_errors.push_back("stage1 partition " + std::to_string(pid) + ": " +
                                                r.error);
      } else {
        r.ok = true;
        r.fit.support = m.payload.at("support").get<std::vector<int>>();
        supports.push_back(r.fit.support);
      }
      res.stage1[std::size_t(pid)] = std::move(r);
    }
    if (supports.size() * 2 < std::size_t(s))
      throw PipelineError("run aborted: more than half of the partitions failed stage 1");
    const FusedSupport fused = fuse_supports(supports, p, cfg_.vote);
    if (fused.support.empty()) throw PipelineError("run aborted: fused support is empty");
    res.report.support = fused.support;
    res.report.vote_shares = fused.vote_shares;

    NodeMessage bc;
    bc.kind = MessageKind::broadcast_support;
    bc.partition_id = -1;
    bc.payload = {{"support", fused.support}};
    for (auto& c : conns) detail::send_line(c.get(), bc.serialize());

    // second barrier: ci_report per worker
    res.stage2.resize(std::size_t(s));
    std::map<int, NodeMessage> ci_msgs;
    for (auto& [pid, ci] : conn_of_partition) {
      detail::LineReader reader(conns[std::size_t(ci)].get());
      const auto line = reader.read_line();
      if (!line) {
        res.stage2[std::size_t(pid)].partition_id = pid;
        res.stage2[std::size_t(pid)].error = "worker closed before ci_report";
        continue;
      }
      const NodeMessage m = NodeMessage::parse(*line);
      if (m.kind != MessageKind::ci_report)
        throw SocketError("expected ci_report, got " + to_string(m.kind));
      ci_msgs[m.partition_id] = m;
    }

    std::vector<std::vector<Interval>> interval_lists;
    std::vector<Interval> intercept_list;
    std::vector<std::vector<double>> bag_sds;
    Vector beta_acc = Vector::Zero(long(fused.support.size()));
    double intercept_acc = 0.0;
    int ok2 = 0;
    for (const auto& [pid, m] : ci_msgs) {
      Stage2Result r;
      r.partition_id = pid;
      if (m.payload.contains("error")) {
        r.error = m.payload.at("error").get<std::string>();
        ++res.manifest.stage2_failures;
        res.manifest.partition_errors.push_back("stage2 partition " + std::to_string(pid) + ": " +
                                                r.error);
      } else {
        r.ok = true;
        r.slope_cis = intervals_from_payload(m.payload.at("intervals"));
        r.intercept_ci = {m.payload.at("intercept").at("lower").get<double>(),
                          m.payload.at("intercept").at("upper").get<double>()};
        const auto beta = m.payload.at("beta").get<std::vector<double>>();
        r.beta = Eigen::Map<const Vector>(beta.data(), long(beta.size()));
        r.sigma = m.payload.at("sigma").get<double>();
        r.replicate_failures = m.payload.at("replicate_failures").get<int>();
        res.manifest.replicate_failures += r.replicate_failures;
        interval_lists.push_back(r.slope_cis);
        intercept_list.push_back(r.intercept_ci);
        bag_sds.push_back(m.payload.at("replicate_sd_per_coordinate").get<std::vector<double>>());
        beta_acc += r.beta.tail(r.beta.size() - 1);
        intercept_acc += r.beta[0];
        ++ok2;
      }
      res.stage2[std::size_t(pid)] = std::move(r);
    }
    if (ok2 * 2 < s)
      throw PipelineError("run aborted: more than half of the partitions failed stage 2");

    res.report.intervals = average_cis(interval_lists, cfg_.trim_ratio);
    {
      std::vector<std::vector<Interval>> ic;
      for (const auto& iv : intercept_list) ic.push_back(std::vector<Interval>{iv});
      res.report.intercept_interval = average_cis(ic, cfg_.trim_ratio).front();
    }
    res.report.point_estimates.assign(beta_acc.data(), beta_acc.data() + beta_acc.size());
    for (auto& v : res.report.point_estimates) v /= double(ok2);
    res.report.intercept_estimate = intercept_acc / double(ok2);
    // Eq.-(17) aggregation from the per-bag per-coordinate SDs
    {
      double coord_acc = 0.0;
      const std::size_t q = bag_sds.front().size();
      for (std::size_t j = 0; j < q; ++j) {
        double bag_acc = 0.0;
        for (const auto& sd : bag_sds) bag_acc += sd[j];
        coord_acc += bag_acc / double(bag_sds.size());
      }
      res.report.sd_estimate = coord_acc / double(q);
    }

    NodeMessage done;
    done.kind = MessageKind::done;
    for (auto& c : conns) detail::send_line(c.get(), done.serialize());
    for (pid_t pid : children) {
      int status = 0;
      ::waitpid(pid, &status, 0);
    }

    res.manifest.seed = cfg_.seed;
    res.manifest.n = n;
    res.manifest.b = res.plan.b;
    res.manifest.s = res.plan.s;
    res.manifest.leftover_rows = res.plan.leftover;
    res.manifest.plan_warning = res.plan.warning;
    return res;
  }

 private:
  pid_t spawn_worker(int id, int port) {
    const pid_t pid = ::fork();
    if (pid < 0) throw SocketError("fork() failed");
    if (pid == 0) {
      const std::string port_s = std::to_string(port);
      const std::string id_s = std::to_string(id);
      const std::string b_s = std::to_string(cfg_.b);
      const std::string seed_s = std::to_string(cfg_.seed);
      const std::string B_s = std::to_string(cfg_.B);
      const std::string alpha_s = std::to_string(cfg_.alpha);
      ::execl(exe_.c_str(), exe_.c_str(), "worker", "--port", port_s.c_str(), "--dataset",
              dataset_.c_str(), "--id", id_s.c_str(), "--b", b_s.c_str(), "--seed", seed_s.c_str(),
              "--boot", B_s.c_str(), "--alpha", alpha_s.c_str(), (char*)nullptr);
      ::_exit(127);  // exec failed
    }
    return pid;
  }

  std::string exe_;
  std::string dataset_;
  PipelineConfig cfg_;
};

//! Worker-side protocol: stage 1 on the own shard, report, wait for the fused
//! support, stage 2, report, wait for done.
inline int run_socket_worker(int port, const std::string& dataset_path, int id,
                             const PipelineConfig& cfg) {
  Matrix X;
  Vector y;
  read_dataset_csv(dataset_path, X, y);
  const PartitionPlan plan = plan_partitions(X.rows(), cfg.b, cfg.k_s_hint, int(X.cols()), cfg.seed);
  const auto parts = partition_rows(plan);
  if (id < 0 || id >= int(parts.size())) throw SocketError("worker: partition id out of range");
  const Matrix Xp = detail::gather_rows(X, parts[std::size_t(id)]);
  const Vector yp = detail::gather_rows(y, parts[std::size_t(id)]);

  detail::Fd sock(::socket(AF_INET, SOCK_STREAM, 0));
  if (!sock.valid()) throw SocketError("worker: socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(std::uint16_t(port));
  if (::connect(sock.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw SocketError("worker: connect() failed");
  detail::LineReader reader(sock.get());

  const Stage1Result s1 = stage1_for_partition(Xp, yp, cfg, id);
  {
    NodeMessage m;
    m.kind = MessageKind::support_report;
    m.partition_id = id;
    if (s1.ok)
      m.payload = {{"support", s1.fit.support}};
    else
      m.payload = {{"error", s1.error}};
    detail::send_line(sock.get(), m.serialize());
  }

  const auto bc_line = reader.read_line();
  if (!bc_line) return 1;
  const NodeMessage bc = NodeMessage::parse(*bc_line);
  if (bc.kind != MessageKind::broadcast_support)
    throw SocketError("worker: expected broadcast_support");
  const auto fused = bc.payload.at("support").get<std::vector<int>>();

  Vector init = Vector::Zero(long(fused.size()) + 1);
  if (s1.ok) {
    init[0] = s1.fit.intercept;
    for (std::size_t k = 0; k < fused.size(); ++k) init[long(k) + 1] = s1.fit.beta[fused[k]];
  }
  const Stage2Result s2 = stage2_for_partition(Xp, yp, fused, init, cfg, id, X.rows());
  {
    NodeMessage m;
    m.kind = MessageKind::ci_report;
    m.partition_id = id;
    if (s2.ok) {
      std::vector<double> sd_per_coord;
      for (Eigen::Index j = 0; j < s2.slope_replicates.cols(); ++j) {
        const double mean = s2.slope_replicates.col(j).mean();
        const double ss = (s2.slope_replicates.col(j).array() - mean).square().sum();
        sd_per_coord.push_back(std::sqrt(ss / double(s2.slope_replicates.rows() - 1)));
      }
      m.payload = {{"intervals", intervals_to_payload(s2.slope_cis, fused)},
                   {"intercept", {{"lower", s2.intercept_ci.lower}, {"upper", s2.intercept_ci.upper}}},
                   {"beta", std::vector<double>(s2.beta.data(), s2.beta.data() + s2.beta.size())},
                   {"sigma", s2.sigma},
                   {"replicate_failures", s2.replicate_failures},
                   {"replicate_sd_per_coordinate", sd_per_coord}};
    } else {
      m.payload = {{"error", s2.error}};
    }
    detail::send_line(sock.get(), m.serialize());
  }

  const auto done_line = reader.read_line();
  if (done_line) {
    const NodeMessage done = NodeMessage::parse(*done_line);
    (void)done;
  }
  return 0;
}

}  // namespace tsrd
