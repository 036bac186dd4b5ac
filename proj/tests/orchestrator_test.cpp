#include <gtest/gtest.h>

#include "fedlp/orchestrator.hpp"
#include "test_util.hpp"

using namespace fedlp;
using fedlp::testing::bit_equal;

namespace {

ExperimentConfig tiny_config(Scheme scheme, std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.num_clients = 10;
  c.participation_rate = 0.3;
  c.local_epochs = 1;
  c.batch_size = 8;
  c.lr = 0.05;
  c.max_global_epochs = 4;
  c.scheme = scheme;
  c.hidden = {12, 10, 8, 6};
  c.master_seed = seed;
  if (scheme == Scheme::fedlp_hetero) c.lc_distribution = lc_uniform(5);
  return c;
}

}  // namespace

TEST(Select, AllClientsWhenKEqualsN) {
  Rng rng(1);
  EXPECT_EQ(select_participants(6, 6, rng), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(select_participants(5, 6, rng), ContractError);
  EXPECT_THROW(select_participants(5, 0, rng), ContractError);
}

TEST(Select, TenOfHundredEveryRound) {
  ExperimentConfig c;
  c.num_clients = 100;
  c.participation_rate = 0.1;
  EXPECT_EQ(c.participants_per_round(), 10u);
  for (std::size_t t = 1; t <= 50; ++t) {
    auto rng = make_stream(3, Purpose::select, 0, t);
    const auto p = select_participants(100, 10, rng);
    EXPECT_EQ(p.size(), 10u);
    EXPECT_EQ(std::set<std::size_t>(p.begin(), p.end()).size(), 10u);
  }
}

TEST(Select, RoundHalfUp) {
  ExperimentConfig c;
  c.num_clients = 10;
  c.participation_rate = 0.25;
  EXPECT_EQ(c.participants_per_round(), 3u);
  c.participation_rate = 0.24;
  EXPECT_EQ(c.participants_per_round(), 2u);
}

// The [0.09, 0.11] band is about 3.3 sigma per client, so over 100 clients a
// given seed lands outside it a few percent of the time; the chi-square check
// below is the seed-robust version of the same claim.
TEST(Select, FrequencyIsUniform) {
  std::vector<std::size_t> hits(100, 0);
  for (std::size_t t = 1; t <= 10000; ++t) {
    auto rng = make_stream(1, Purpose::select, 0, t);
    for (std::size_t id : select_participants(100, 10, rng)) ++hits[id];
  }
  for (std::size_t h : hits) {
    EXPECT_GE(h / 10000.0, 0.09);
    EXPECT_LE(h / 10000.0, 0.11);
  }
}

TEST(Select, FrequencyChiSquareAcrossSeeds) {
  // 0.999 quantile of chi-square with 99 degrees of freedom.
  constexpr double kChi2Df99Q999 = 148.23;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<std::size_t> hits(100, 0);
    for (std::size_t t = 1; t <= 10000; ++t) {
      auto rng = make_stream(seed, Purpose::select, 0, t);
      for (std::size_t id : select_participants(100, 10, rng)) ++hits[id];
    }
    // Each round picks exactly 10 of 100: per-client variance n*p*(1-p).
    double stat = 0.0;
    for (std::size_t h : hits) stat += std::pow(static_cast<double>(h) - 1000.0, 2) / 900.0;
    EXPECT_LT(stat, kChi2Df99Q999) << "seed " << seed;
  }
}

TEST(LocalTrain, ZeroEpochsLeavesModel) {
  const auto [train, test] = fedlp::testing::small_data(1);
  Rng init(1);
  const std::vector<std::size_t> widths{8, 6, 4};
  ClientState c{0, {0, 1, 2, 3, 4}, make_mlp(widths, init), LprConfig::uniform(2, 1.0)};
  const auto before = c.model;
  Rng rng(2);
  const auto r = local_train(c, train, 0, 4, 0.1, rng);
  EXPECT_TRUE(bit_equal(c.model, before));
  EXPECT_EQ(r.samples, 0u);
}

TEST(LocalTrain, DeterministicAcrossIdenticalClients) {
  const auto [train, test] = fedlp::testing::small_data(2);
  Rng init(1);
  const std::vector<std::size_t> widths{8, 6, 4};
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ClientState a{0, idx, make_mlp(widths, init), LprConfig::uniform(2, 1.0)};
  ClientState b = a;
  b.id = 1;
  Rng ra(5), rb(5);
  const auto r = local_train(a, train, 3, 7, 0.1, ra);
  local_train(b, train, 3, 7, 0.1, rb);
  EXPECT_TRUE(bit_equal(a.model, b.model));
  EXPECT_EQ(r.samples, 3 * train.size());
  EXPECT_EQ(r.flops, flops_count(a.model) * r.samples * 3);
}

TEST(LocalTrain, FiveEpochsReduceShardLoss) {
  const auto [train, test] = fedlp::testing::small_data(3, 30, 8, 4, 8.0);
  Rng init(2);
  const std::vector<std::size_t> widths{8, 16, 16, 4};
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < train.size(); i += 2) idx.push_back(i);
  ClientState c{0, idx, make_mlp(widths, init), LprConfig::uniform(3, 1.0)};
  const auto shard = train.subset(idx);
  const double before = loss(c.model, shard.features, shard.labels);
  Rng rng(3);
  local_train(c, train, 5, 8, 0.05, rng);
  EXPECT_LE(loss(c.model, shard.features, shard.labels), before);
}

TEST(LocalTrain, EmptyShardIsSkipped) {
  const auto [train, test] = fedlp::testing::small_data(1);
  Rng init(1);
  const std::vector<std::size_t> widths{8, 4};
  ClientState c{0, {}, make_mlp(widths, init), LprConfig::uniform(1, 1.0)};
  Rng rng(1);
  EXPECT_TRUE(local_train(c, train, 2, 4, 0.1, rng).skipped);
}

TEST(Round, FedAvgEqualsHomoWithFullRate) {
  const auto [train, test] = fedlp::testing::small_data(4);
  auto homo = tiny_config(Scheme::fedlp_homo);
  homo.lpr = {1.0};
  Simulation a(tiny_config(Scheme::fedavg), train, test), b(homo, train, test);
  for (int r = 0; r < 4; ++r) {
    const auto ma = a.run_round(), mb = b.run_round();
    ASSERT_TRUE(bit_equal(a.global().model, b.global().model)) << "round " << r + 1;
    EXPECT_EQ(csv_row(ma), csv_row(mb));
  }
}

TEST(Round, HomoHalfRateUploadsAboutHalfTheLayers) {
  const auto [train, test] = fedlp::testing::small_data(5, 15, 8, 4);
  auto c = tiny_config(Scheme::fedlp_homo);
  c.num_clients = 20;
  c.participation_rate = 0.5;
  c.lpr = {0.5};
  c.local_epochs = 0;  // masking does not depend on training
  c.max_global_epochs = 400;
  Simulation sim(c, train, test);
  std::size_t layers = 0, rounds = 0;
  while (!sim.finished()) {
    sim.run_round();
    for (const auto& p : sim.last_trace().payloads) layers += p.layers.size();
    ++rounds;
  }
  // 50 Bernoulli(0.5) bits per round: mean 25, sd sqrt(12.5) per round.
  const double mean = static_cast<double>(layers) / rounds;
  EXPECT_NEAR(mean, 25.0, 5.0 * std::sqrt(12.5 / rounds));
}

TEST(Round, HeteroUploadsNeverCarryAHead) {
  const auto [train, test] = fedlp::testing::small_data(6);
  Simulation sim(tiny_config(Scheme::fedlp_hetero), train, test);
  while (!sim.finished()) {
    sim.run_round();
    const auto& tr = sim.last_trace();
    for (std::size_t i = 0; i < tr.payloads.size(); ++i) {
      const auto& p = tr.payloads[i];
      const auto& client = sim.clients()[p.source_client];
      const std::size_t lk = client.shared_layers();
      ASSERT_EQ(p.layers.size(), lk);
      for (const auto& [l, params] : p.layers) {
        EXPECT_LE(l, lk);
        EXPECT_TRUE(params.same_shape(sim.global().model.layer(l)));
      }
      if (client.model.has_personal_head()) {
        EXPECT_EQ(p.param_count() + client.model.blocks().back().params.count(), param_count(client.model));
      }
    }
  }
}

TEST(Round, NonParticipantsOnlyChangeThroughDistribute) {
  const auto [train, test] = fedlp::testing::small_data(7);
  Simulation sim(tiny_config(Scheme::fedlp_homo), train, test);
  sim.run_round();
  for (const auto& c : sim.clients()) EXPECT_TRUE(bit_equal(c.model, sim.global().model));
}

TEST(Round, ParallelMatchesSerial) {
  const auto [train, test] = fedlp::testing::small_data(8);
  for (auto scheme : {Scheme::fedavg, Scheme::fedlp_homo, Scheme::fedlp_hetero}) {
    auto serial = tiny_config(scheme, 11);
    serial.lpr = {0.6};
    auto parallel = serial;
    parallel.workers = 3;
    const auto a = run_experiment(serial, train, test);
    const auto b = run_experiment(parallel, train, test);
    EXPECT_TRUE(bit_equal(a.final_state.model, b.final_state.model));
    EXPECT_EQ(format_csv(a.rounds), format_csv(b.rounds));
  }
}

TEST(Experiment, RerunIsByteIdentical) {
  const auto [train, test] = fedlp::testing::small_data(9);
  auto c = tiny_config(Scheme::fedlp_homo, 5);
  c.lpr = {0.4};
  EXPECT_EQ(format_csv(run_experiment(c, train, test).rounds), format_csv(run_experiment(c, train, test).rounds));
}

TEST(Experiment, SingleRoundSingleRow) {
  const auto [train, test] = fedlp::testing::small_data(10);
  auto c = tiny_config(Scheme::fedavg);
  c.max_global_epochs = 1;
  const auto csv = format_csv(run_experiment(c, train, test).rounds);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Experiment, EvalEveryThinsRows) {
  const auto [train, test] = fedlp::testing::small_data(10);
  auto c = tiny_config(Scheme::fedavg);
  c.max_global_epochs = 5;
  c.eval_every = 2;
  const auto rounds = run_experiment(c, train, test).rounds;
  std::vector<std::size_t> evaluated;
  for (const auto& m : rounds)
    if (m.evaluated) evaluated.push_back(m.round);
  EXPECT_EQ(evaluated, (std::vector<std::size_t>{2, 4, 5}));
}

TEST(Experiment, EmptyShardsAreSkipped) {
  const auto [train, test] = fedlp::testing::small_data(11, 3, 8, 4);
  auto c = tiny_config(Scheme::fedavg);
  c.num_clients = 12;
  c.participation_rate = 1.0;
  c.partition.scheme = PartitionScheme::dirichlet;
  c.partition.alpha = 0.01;
  c.max_global_epochs = 2;
  Simulation sim(c, train, test);
  std::size_t empty = 0;
  for (const auto& cl : sim.clients()) empty += cl.data_indices.empty();
  ASSERT_GT(empty, 0u);
  sim.run_round();
  EXPECT_EQ(sim.last_trace().skipped.size(), empty);
  EXPECT_EQ(sim.last_trace().payloads.size(), 12 - empty);
}

TEST(Experiment, ConfigErrorsListedBeforeCompute) {
  const auto [train, test] = fedlp::testing::small_data(1);
  auto c = tiny_config(Scheme::fedlp_homo);
  c.participation_rate = 0.0;
  c.max_global_epochs = 0;
  c.lpr = {1.5};
  try {
    Simulation sim(c, train, test);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 3u);
  }
}
