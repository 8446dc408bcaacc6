#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fedprobe/data/backdoor.hpp"
#include "fedprobe/data/synthetic.hpp"
#include "fedprobe/error.hpp"

using namespace fedprobe;
using namespace fedprobe::data;

namespace {

const Shape kSample{3, 6, 6};

std::vector<Dataset> five_clients() {
  std::vector<Dataset> clients;
  for (std::uint64_t c = 0; c < 5; ++c) {
    clients.push_back(gen_synthetic(4, 10, kSample, 100 + c));
  }
  return clients;
}

BackdoorSpec spec_for(std::size_t malicious, Rate rate = {1, 3}) {
  BackdoorSpec s;
  s.malicious_rate = rate;
  s.num_malicious_clients = malicious;
  s.seed = 77;
  return s;
}

bool is_triggered(std::span<const double> x, const TriggerPatch& p) {
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = p.row; y < p.row + p.height; ++y)
      for (std::size_t q = p.col; q < p.col + p.width; ++q)
        if (x[(c * 6 + y) * 6 + q] != p.value) return false;
  return true;
}

}  // namespace

TEST(Trigger, WritesExactlyThePatch) {
  const Dataset d = gen_synthetic(2, 1, kSample, 1);
  std::vector<double> x(d.sample(0).begin(), d.sample(0).end());
  const std::vector<double> before = x;
  TriggerPatch p;  // (0, 0), 3x3, 1.0
  apply_trigger(x, kSample, p);
  std::size_t changed_to_one = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t y = (i / 6) % 6, q = i % 6;
    if (y < 3 && q < 3) {
      EXPECT_EQ(x[i], 1.0);
      ++changed_to_one;
    } else {
      EXPECT_EQ(x[i], before[i]);
    }
  }
  EXPECT_EQ(changed_to_one, 27u);
}

TEST(Trigger, LocalityAndIdempotenceForManyPatches) {
  const Dataset d = gen_synthetic(1, 20, kSample, 2);
  for (std::size_t s = 0; s < d.size(); ++s) {
    const TriggerPatch p{s % 4, (s / 4) % 4, 1 + s % 3, 1 + (s / 3) % 3,
                         0.05 * static_cast<double>(s)};
    std::vector<double> once(d.sample(s).begin(), d.sample(s).end());
    apply_trigger(once, kSample, p);
    std::vector<double> twice = once;
    apply_trigger(twice, kSample, p);
    EXPECT_EQ(once, twice);
    for (std::size_t i = 0; i < once.size(); ++i) {
      const std::size_t y = (i / 6) % 6, q = i % 6;
      const bool inside = y >= p.row && y < p.row + p.height && q >= p.col &&
                          q < p.col + p.width;
      EXPECT_EQ(once[i], inside ? p.value : d.sample(s)[i]);
    }
  }
  std::vector<double> x(108);
  EXPECT_THROW(apply_trigger(x, kSample, {4, 0, 3, 3, 1.0}), ShapeError);
}

TEST(Rate, PerClientDerivation) {
  EXPECT_EQ(per_client_rate({1, 3}, 1), (Rate{1, 3}));
  EXPECT_EQ(per_client_rate({1, 3}, 2), (Rate{1, 6}));
  EXPECT_EQ(per_client_rate({2, 3}, 2), (Rate{1, 3}));
  EXPECT_EQ(per_client_rate({1, 1}, 5), (Rate{1, 5}));
  EXPECT_THROW(per_client_rate({1, 3}, 0), std::invalid_argument);
}

TEST(Inject, SingleClientHitsRate) {
  const auto clients = five_clients();
  const std::vector<std::size_t> ids{2};
  const Injection inj = inject_backdoor(clients, spec_for(1), ids);
  ASSERT_EQ(inj.malicious.size(), 1u);
  const ClientPoisoning& m = inj.malicious[0];
  EXPECT_EQ(m.client_id, 2u);
  EXPECT_EQ(inj.pool_size, 25u);  // half of 5 x 10 source samples
  const double total = static_cast<double>(m.clean + m.poisoned);
  EXPECT_LE(std::abs(m.achieved_rate() - 1.0 / 3.0), 1.0 / total);
  EXPECT_EQ(inj.clients[2].size(), m.clean + m.poisoned);
  const auto& p = spec_for(1).trigger;
  for (std::size_t i : m.poisoned_indices) {
    EXPECT_EQ(inj.clients[2].labels[i], 2u);
    EXPECT_TRUE(is_triggered(inj.clients[2].sample(i), p));
  }
}

TEST(Inject, TwoClientsGetOneSixthEach) {
  const auto clients = five_clients();
  const std::vector<std::size_t> ids{4, 0};
  const Injection inj = inject_backdoor(clients, spec_for(2), ids);
  ASSERT_EQ(inj.malicious.size(), 2u);
  EXPECT_EQ(inj.malicious[0].client_id, 0u);
  EXPECT_EQ(inj.malicious[1].client_id, 4u);
  for (const auto& m : inj.malicious) {
    EXPECT_EQ(m.target_rate, (Rate{1, 6}));
    const double total = static_cast<double>(m.clean + m.poisoned);
    EXPECT_LE(std::abs(m.achieved_rate() - 1.0 / 6.0), 1.0 / total);
  }
}

TEST(Inject, CumulativeTriggerPoolIsConstant) {
  const auto clients = five_clients();
  std::size_t pool = 0;
  for (std::size_t k : {1u, 2u, 5u}) {
    std::vector<std::size_t> ids(k);
    for (std::size_t i = 0; i < k; ++i) ids[i] = i;
    const Injection inj = inject_backdoor(clients, spec_for(k), ids);
    if (pool == 0) pool = inj.pool_size;
    EXPECT_EQ(inj.pool_size, pool);
    std::size_t base = 0, total_clients = 0;
    for (const auto& m : inj.malicious) base += m.base;
    for (const auto& c : inj.clients) total_clients += c.size();
    EXPECT_LE(base, pool);
    // Every pool sample leaves its holder exactly once.
    std::size_t source_left = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      source_left += std::count(inj.clients[c].labels.begin(),
                                inj.clients[c].labels.end(), 1u);
    }
    EXPECT_EQ(source_left, 50u - pool);
  }
}

TEST(Inject, RateOneDropsCleanData) {
  const auto clients = five_clients();
  const std::vector<std::size_t> ids{1};
  const Injection inj = inject_backdoor(clients, spec_for(1, {1, 1}), ids);
  const Dataset& m = inj.clients[1];
  EXPECT_EQ(inj.malicious[0].clean, 0u);
  EXPECT_EQ(m.size(), std::max<std::size_t>(25, clients[1].size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m.labels[i], 2u);
    EXPECT_TRUE(is_triggered(m.sample(i), spec_for(1).trigger));
  }
}

TEST(Inject, CleanSamplesArePreservedInOrder) {
  const auto clients = five_clients();
  const std::vector<std::size_t> ids{3};
  const Injection inj = inject_backdoor(clients, spec_for(1), ids);
  for (std::size_t c = 0; c < 5; ++c) {
    const Dataset& after = inj.clients[c];
    const std::size_t clean = c == 3 ? inj.malicious[0].clean : after.size();
    // Walk the original in order; every kept sample must appear next.
    std::size_t j = 0;
    for (std::size_t i = 0; i < clients[c].size() && j < clean; ++i) {
      const auto a = clients[c].sample(i);
      const auto b = after.sample(j);
      if (std::equal(a.begin(), a.end(), b.begin()) &&
          clients[c].labels[i] == after.labels[j]) {
        ++j;
      } else {
        EXPECT_EQ(clients[c].labels[i], 1u) << "only source samples may leave";
      }
    }
    EXPECT_EQ(j, clean) << "client " << c;
  }
}

TEST(Inject, ZeroFractionIsNoOp) {
  const auto clients = five_clients();
  BackdoorSpec s = spec_for(1);
  s.trigger_fraction = 0.0;
  const std::vector<std::size_t> ids{0};
  const Injection inj = inject_backdoor(clients, s, ids);
  EXPECT_EQ(inj.clients, clients);
  EXPECT_TRUE(inj.malicious.empty());
  EXPECT_EQ(inj.pool_size, 0u);
}

TEST(Inject, Deterministic) {
  const auto clients = five_clients();
  const std::vector<std::size_t> ids{0, 1};
  EXPECT_EQ(inject_backdoor(clients, spec_for(2), ids).clients,
            inject_backdoor(clients, spec_for(2), ids).clients);
}

TEST(Inject, Errors) {
  const auto clients = five_clients();
  const std::vector<std::size_t> dup{1, 1};
  EXPECT_THROW(inject_backdoor(clients, spec_for(2), dup), std::invalid_argument);
  const std::vector<std::size_t> missing{5};
  EXPECT_THROW(inject_backdoor(clients, spec_for(1), missing), std::invalid_argument);
  const std::vector<std::size_t> one{0};
  EXPECT_THROW(inject_backdoor(clients, spec_for(2), one), std::invalid_argument);
  EXPECT_THROW(inject_backdoor(clients, spec_for(0), {}), std::invalid_argument);
  BackdoorSpec same = spec_for(1);
  same.target_class = same.source_class;
  EXPECT_THROW(inject_backdoor(clients, same, one), std::invalid_argument);
  BackdoorSpec big = spec_for(1);
  big.trigger.width = 7;
  EXPECT_THROW(inject_backdoor(clients, big, one), std::invalid_argument);

  std::vector<Dataset> no_source{gen_synthetic(1, 5, kSample, 0),
                                 gen_synthetic(1, 5, kSample, 1)};
  for (auto& d : no_source) d.num_classes = 4;
  EXPECT_THROW(inject_backdoor(no_source, spec_for(1), one), DataError);
}

TEST(BackdoorTestset, TriggersEverySourceSample) {
  const Dataset test = gen_synthetic(4, 100, kSample, 9);
  const BackdoorSpec s = spec_for(1);
  const Dataset bd = make_backdoor_testset(test, s);
  EXPECT_EQ(bd.size(), 100u);
  for (std::size_t i = 0; i < bd.size(); ++i) {
    EXPECT_EQ(bd.labels[i], 2u);
    EXPECT_TRUE(is_triggered(bd.sample(i), s.trigger));
  }
  const Dataset none = gen_synthetic(1, 10, kSample, 9);
  Dataset relabelled = none;
  relabelled.num_classes = 4;
  EXPECT_THROW(make_backdoor_testset(relabelled, s), DataError);
}
