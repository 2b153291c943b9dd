#pragma once

// Simulated one-hop backhaul. Messages carry an AP's latest estimate to a
// neighbor; failures and random loss are injected per round, and receivers
// keep the last value they actually got from each neighbor.

#include "cmd/errors.hpp"
#include "cmd/objective.hpp"
#include "cmd/random.hpp"
#include "cmd/scenario.hpp"

#include <algorithm>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmd {

class UnknownEdge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ApFailure {
  int ap = 0;
  int from_round = 1;  // crashed for every round >= from_round
};

struct LinkFailure {
  int a = 0;
  int b = 0;
  int from_round = 1;
  int to_round = 1;  // inclusive; both directions are down
};

struct FailurePlan {
  std::vector<ApFailure> ap_failures;
  std::vector<LinkFailure> link_failures;
  double drop_prob = 0.0;

  bool empty() const { return ap_failures.empty() && link_failures.empty() && drop_prob == 0.0; }

  bool ap_down(int ap, int round) const {
    return std::any_of(ap_failures.begin(), ap_failures.end(),
                       [&](const ApFailure& f) { return f.ap == ap && round >= f.from_round; });
  }

  bool link_down(int from, int to, int round) const {
    return std::any_of(link_failures.begin(), link_failures.end(), [&](const LinkFailure& f) {
      const bool same = (f.a == from && f.b == to) || (f.a == to && f.b == from);
      return same && round >= f.from_round && round <= f.to_round;
    });
  }
};

inline void validate(const FailurePlan& plan, const Topology& topo, int rounds) {
  // drop_prob = 1 is accepted as a "backhaul dead" setting.
  if (!(plan.drop_prob >= 0.0 && plan.drop_prob <= 1.0)) {
    throw InvalidConfig("failure plan: drop_prob must lie in [0, 1]");
  }
  for (const auto& f : plan.ap_failures) {
    if (f.ap < 0 || f.ap >= topo.num_aps()) {
      throw InvalidConfig("failure plan: unknown AP " + std::to_string(f.ap));
    }
    if (f.from_round < 1 || f.from_round > rounds) {
      throw InvalidConfig("failure plan: AP failure round outside [1, T]");
    }
  }
  for (const auto& f : plan.link_failures) {
    if (f.a < 0 || f.a >= topo.num_aps() || f.b < 0 || f.b >= topo.num_aps() ||
        !topo.adjacent(f.a, f.b)) {
      throw InvalidConfig("failure plan: link " + std::to_string(f.a) + "-" + std::to_string(f.b) +
                          " is not in the backhaul graph");
    }
    if (f.from_round < 1 || f.to_round > rounds || f.from_round > f.to_round) {
      throw InvalidConfig("failure plan: link failure rounds outside [1, T]");
    }
  }
}

struct Message {
  int from = 0;
  int to = 0;
  int origin_round = 0;
  std::shared_ptr<const GammaVector> payload;

  std::size_t scalars() const { return payload ? static_cast<std::size_t>(payload->size()) : 0; }
};

struct RoundStats {
  int round = 0;
  std::size_t attempted = 0;
  std::size_t delivered = 0;
  std::size_t dropped = 0;
  std::size_t scalars_sent = 0;
  std::size_t scalars_delivered = 0;

  friend bool operator==(const RoundStats&, const RoundStats&) = default;
};

/// Per-round and per-AP communication counters.
class CommLedger {
 public:
  explicit CommLedger(int num_aps = 0)
      : sent_messages_(static_cast<std::size_t>(num_aps), 0),
        sent_scalars_(static_cast<std::size_t>(num_aps), 0) {}

  void record(const RoundStats& s, const std::vector<Message>& attempted) {
    if (s.attempted != s.delivered + s.dropped) {
      throw InvariantViolation("ledger: attempted != delivered + dropped");
    }
    rounds_.push_back(s);
    for (const auto& m : attempted) {
      sent_messages_.at(static_cast<std::size_t>(m.from)) += 1;
      sent_scalars_.at(static_cast<std::size_t>(m.from)) += m.scalars();
    }
  }

  const std::vector<RoundStats>& rounds() const { return rounds_; }
  const std::vector<std::size_t>& sent_messages_per_ap() const { return sent_messages_; }
  const std::vector<std::size_t>& sent_scalars_per_ap() const { return sent_scalars_; }

  RoundStats totals() const {
    RoundStats t;
    t.round = static_cast<int>(rounds_.size());
    for (const auto& r : rounds_) {
      t.attempted += r.attempted;
      t.delivered += r.delivered;
      t.dropped += r.dropped;
      t.scalars_sent += r.scalars_sent;
      t.scalars_delivered += r.scalars_delivered;
    }
    return t;
  }

  friend bool operator==(const CommLedger&, const CommLedger&) = default;

 private:
  std::vector<RoundStats> rounds_;
  std::vector<std::size_t> sent_messages_;
  std::vector<std::size_t> sent_scalars_;
};

struct DeliveryResult {
  std::vector<Message> delivered;
  RoundStats stats;
};

/// Applies the failure plan and random loss to one round of messages.
/// Loss draws are taken in message order, one per message that survives the
/// deterministic failures.
inline DeliveryResult deliver_round(const std::vector<Message>& messages, const Topology& topo,
                                    const FailurePlan& plan, int round, Rng& rng) {
  DeliveryResult out;
  out.stats.round = round;
  for (const auto& m : messages) {
    if (m.from < 0 || m.from >= topo.num_aps() || m.to < 0 || m.to >= topo.num_aps() ||
        !topo.adjacent(m.from, m.to)) {
      throw UnknownEdge("deliver_round: no backhaul link " + std::to_string(m.from) + "->" +
                        std::to_string(m.to));
    }
    out.stats.attempted += 1;
    out.stats.scalars_sent += m.scalars();
    bool lost = plan.ap_down(m.from, round) || plan.ap_down(m.to, round) ||
                plan.link_down(m.from, m.to, round);
    if (!lost && plan.drop_prob > 0.0) lost = rng.uniform() < plan.drop_prob;
    if (lost) {
      out.stats.dropped += 1;
    } else {
      out.stats.delivered += 1;
      out.stats.scalars_delivered += m.scalars();
      out.delivered.push_back(m);
    }
  }
  return out;
}

/// Last value received by each AP from each of its neighbors.
class Mailbox {
 public:
  struct Slot {
    std::shared_ptr<const GammaVector> value;
    int origin_round = 0;  // 0: the initial all-zero value
  };

  Mailbox(const Topology& topo, Eigen::Index num_devices) : neighbors_(topo.neighbors) {
    auto zeros = std::make_shared<const GammaVector>(GammaVector::Zero(num_devices));
    slots_.resize(neighbors_.size());
    for (std::size_t b = 0; b < neighbors_.size(); ++b) {
      slots_[b].assign(neighbors_[b].size(), Slot{zeros, 0});
    }
  }

  void accept(const std::vector<Message>& delivered) {
    for (const auto& m : delivered) {
      auto& nb = neighbors_.at(static_cast<std::size_t>(m.to));
      const auto it = std::lower_bound(nb.begin(), nb.end(), m.from);
      if (it == nb.end() || *it != m.from) {
        throw UnknownEdge("mailbox: " + std::to_string(m.from) + " is not a neighbor of " +
                          std::to_string(m.to));
      }
      auto& slot = slots_[static_cast<std::size_t>(m.to)][static_cast<std::size_t>(it - nb.begin())];
      slot = Slot{m.payload, m.origin_round};
    }
  }

  /// Slots of AP b, aligned with topology.neighbors[b].
  const std::vector<Slot>& inbox(int b) const { return slots_.at(static_cast<std::size_t>(b)); }

 private:
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<Slot>> slots_;
};

}  // namespace cmd
