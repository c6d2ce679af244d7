#include <doctest.h>

#include <sstream>

#include "bnnfi/error.hpp"
#include "bnnfi/fault.hpp"
#include "support/test_util.hpp"

using namespace bnnfi;

TEST_SUITE("fault") {

TEST_CASE("memory map totals and regions") {
  const NetworkTopology lfc = build_lfc(1024, Precision::W1A1);
  const MemoryMap weights = build_memory_map(lfc, MapTarget::weights());
  CHECK(weights.total_bits == 2'910'208);
  CHECK(weights.regions.size() == 4);
  CHECK(weights.regions[0].bit_length == 784 * 1024);
  CHECK(weights.regions[1].start_bit == 784 * 1024);

  const MemoryMap acts = build_memory_map(lfc, MapTarget::activations());
  CHECK(acts.total_bits == 3 * 1024);  // three hidden activation buffers, 1 bit each
  CHECK(acts.regions.size() == 3);

  const NetworkTopology cnv = build_cnv(Precision::W1A1);
  const MemoryMap layer0 =
      build_memory_map(cnv, MapTarget::layer(0, StorageKind::Weights));
  CHECK(layer0.total_bits == 3 * 64 * 9);  // 1,728

  CHECK_THROWS_AS(build_memory_map(cnv, MapTarget::layer(2, StorageKind::Weights)),
                  Error);  // MaxPool has no weights
  CHECK_THROWS_AS(build_memory_map(cnv, MapTarget::layer(99, StorageKind::Weights)), Error);
  CHECK_THROWS_AS(build_memory_map(cnv, MapTarget::layer(10, StorageKind::Activations)),
                  Error);  // final layer output is not stored
}

TEST_CASE("per-layer region sums equal the whole map") {
  const NetworkTopology net = build_cnv_plan(Precision::W1A1, 4, 16);
  size_t weight_sum = 0, act_sum = 0;
  for (size_t k = 0; k < net.layers.size(); ++k) {
    if (net.layers[k].has_weights())
      weight_sum += build_memory_map(net, MapTarget::layer(k, StorageKind::Weights)).total_bits;
    if (k + 1 < net.layers.size())
      act_sum += build_memory_map(net, MapTarget::layer(k, StorageKind::Activations)).total_bits;
  }
  CHECK(weight_sum == build_memory_map(net, MapTarget::weights()).total_bits);
  CHECK(act_sum == build_memory_map(net, MapTarget::activations()).total_bits);
}

TEST_CASE("map target string round trip") {
  for (const MapTarget& t : {MapTarget::weights(), MapTarget::activations(),
                             MapTarget::layer(3, StorageKind::Activations)}) {
    const MapTarget back = parse_map_target(to_string(t));
    CHECK(back.kind == t.kind);
    CHECK(back.layer_index == t.layer_index);
    CHECK(back.storage == t.storage);
  }
  CHECK_THROWS_AS(parse_map_target("layer:x:weights"), Error);
  CHECK_THROWS_AS(parse_map_target("everything"), Error);
}

TEST_CASE("sample_faults forced and bounded") {
  MemoryMap one;
  one.regions = {{0, StorageKind::Weights, 0, 1}};
  one.total_bits = 1;
  SplitMix64 rng(1);
  const auto sites = sample_faults(rng, 1, one, 1, FaultModel::SEU);
  REQUIRE(sites.size() == 1);
  CHECK(sites[0].bit_address == 0);
  CHECK(sites[0].time_index == 0);

  MemoryMap empty;
  CHECK_THROWS_AS(sample_faults(rng, 1, empty, 1, FaultModel::SEU), Error);
  CHECK_THROWS_AS(sample_faults(rng, 0, one, 1, FaultModel::SEU), Error);

  MemoryMap map;
  map.regions = {{0, StorageKind::Weights, 0, 4096}};
  map.total_bits = 4096;
  const auto hundred = sample_faults(rng, 100, map, 1000, FaultModel::MBU8);
  REQUIRE(hundred.size() == 100);
  for (size_t i = 0; i < hundred.size(); ++i) {
    CHECK(hundred[i].bit_address < 4096);
    CHECK(hundred[i].time_index < 1000);
    if (i > 0) CHECK(hundred[i - 1].time_index <= hundred[i].time_index);  // sorted
  }
}

TEST_CASE("sampled addresses and times are uniform (chi-square)") {
  MemoryMap map;
  map.regions = {{0, StorageKind::Weights, 0, 1024}};
  map.total_bits = 1024;
  SplitMix64 rng(0xFEEDF00Dull);
  constexpr size_t kSamples = 20000;
  std::vector<uint64_t> addr_bins(64, 0), time_bins(64, 0);
  const auto sites = sample_faults(rng, kSamples, map, 640, FaultModel::SEU);
  for (const FaultSite& s : sites) {
    addr_bins[s.bit_address / 16]++;
    time_bins[s.time_index / 10]++;
  }
  const double addr_p =
      test::chi_square_pvalue(test::uniform_chi_square(addr_bins, kSamples), 63);
  const double time_p =
      test::chi_square_pvalue(test::uniform_chi_square(time_bins, kSamples), 63);
  CHECK(addr_p > 0.01);
  CHECK(time_p > 0.01);
}

TEST_CASE("chi-square helper matches table values") {
  // Known critical values of the chi-square distribution.
  CHECK(test::chi_square_pvalue(92.010, 63) == doctest::Approx(0.01).epsilon(0.01));
  CHECK(test::chi_square_pvalue(82.529, 63) == doctest::Approx(0.05).epsilon(0.01));
  CHECK(test::chi_square_pvalue(3.841, 1) == doctest::Approx(0.05).epsilon(0.01));
}

TEST_CASE("expand_mbu bursts and clipping") {
  MemoryMap map;
  map.regions = {{0, StorageKind::Weights, 0, 100}};
  map.total_bits = 100;
  FaultSite site;
  site.model = FaultModel::MBU8;

  site.bit_address = 0;
  CHECK(expand_mbu(site, map) == std::vector<uint64_t>{0, 1, 2, 3, 4, 5, 6, 7});

  site.bit_address = 97;  // three bits before the end
  CHECK(expand_mbu(site, map) == std::vector<uint64_t>{97, 98, 99});

  site.model = FaultModel::SEU;
  CHECK_THROWS_AS(expand_mbu(site, map), Error);
}

TEST_CASE("mbu burst crosses layer boundaries") {
  NetworkTopology net = build_lfc(1, Precision::W1A1);
  test::randomize_network(net, 2);
  const MemoryMap map = build_memory_map(net, MapTarget::weights());
  // Regions: 784 | 1 | 1 | 10. A burst starting at 780 spans all four.
  FaultOverlay overlay(net, map, Persistence::PersistentRead);
  FaultSite site;
  site.model = FaultModel::MBU8;
  site.bit_address = 780;
  const auto addrs = expand_mbu(site, map);
  CHECK(addrs.size() == 8);
  overlay.apply_addresses(addrs);
  CHECK(overlay.layer_weights_dirty(0));
  CHECK(overlay.layer_weights_dirty(1));
  CHECK(overlay.layer_weights_dirty(2));
  CHECK(overlay.layer_weights_dirty(3));
  // Layer 3 got bits 786, 787 -> local bits 0 and 1.
  const auto clean = std::get<BitTensor>(*net.layers[3].weights).words();
  CHECK((overlay.weight_words(3)[0] ^ clean[0]) == 0b11);
}

TEST_CASE("xor involution restores clean reads") {
  NetworkTopology net = build_lfc(8, Precision::W1A1);
  test::randomize_network(net, 3);
  const MemoryMap map = build_memory_map(net, MapTarget::weights());
  FaultOverlay overlay(net, map, Persistence::PersistentRead);
  SplitMix64 rng(4);
  std::vector<uint64_t> addrs;
  for (int i = 0; i < 50; ++i) addrs.push_back(rng.uniform_below(map.total_bits));
  overlay.apply_addresses(addrs);
  overlay.apply_addresses(addrs);  // second application restores every bit
  for (size_t k = 0; k < net.layers.size(); ++k) {
    const auto clean = std::get<BitTensor>(*net.layers[k].weights).words();
    const auto faulted = overlay.weight_words(k);
    for (size_t w = 0; w < clean.size(); ++w) CHECK(faulted[w] == clean[w]);
  }
}

TEST_CASE("faulty_read differs in exactly the flipped bit") {
  NetworkTopology net = build_lfc(8, Precision::W1A1);
  test::randomize_network(net, 5);
  const MemoryMap map = build_memory_map(net, MapTarget::weights());
  FaultOverlay overlay(net, map, Persistence::PersistentRead);
  const uint64_t addr = 784 * 8 + 30;  // inside layer 1 (8x8 weights)
  const size_t region = map.region_index_of(addr);
  CHECK(map.regions[region].layer == 1);
  const uint64_t local = addr - map.regions[region].start_bit;
  const uint64_t before = overlay.read_word(region, size_t(local >> 6));
  overlay.apply_addresses(std::vector<uint64_t>{addr});
  const uint64_t after = overlay.read_word(region, size_t(local >> 6));
  CHECK((before ^ after) == (uint64_t(1) << (local & 63)));
  CHECK_THROWS_AS(overlay.read_word(region, 1 << 20), Error);
}

TEST_CASE("containment: faults never leak into other regions") {
  NetworkTopology net = build_lfc(16, Precision::W1A1);
  test::randomize_network(net, 6);
  const MemoryMap map = build_memory_map(net, MapTarget::weights());
  FaultOverlay overlay(net, map, Persistence::PersistentRead);
  // Flip many bits inside layer 2's region only.
  const MemRegion& r2 = map.regions[2];
  SplitMix64 rng(7);
  std::vector<uint64_t> addrs;
  for (int i = 0; i < 40; ++i) addrs.push_back(r2.start_bit + rng.uniform_below(r2.bit_length));
  overlay.apply_addresses(addrs);
  for (size_t k : {size_t(0), size_t(1), size_t(3)}) {
    const auto clean = std::get<BitTensor>(*net.layers[k].weights).words();
    const auto read = overlay.weight_words(k);
    for (size_t w = 0; w < clean.size(); ++w) REQUIRE(read[w] == clean[w]);
  }
}

TEST_CASE("zero-fault identity is bit-exact") {
  NetworkTopology net = build_cnv_plan(Precision::W1A1, 4, 16);
  test::randomize_network(net, 8);
  SplitMix64 rng(9);
  const IntTensor image = test::random_image(rng, Shape{3, 32, 32});

  ActivationBuffer plain = ActivationBuffer::for_network(net);
  const ForwardResult r1 = forward(net, image, nullptr, plain);

  const MemoryMap map = build_memory_map(net, MapTarget::weights());
  FaultOverlay overlay(net, map, Persistence::PersistentRead);
  ActivationBuffer hooked = ActivationBuffer::for_network(net);
  overlay.attach(hooked);
  const ForwardResult r2 = forward(net, image, &overlay, hooked);

  CHECK(r1.scores == r2.scores);
  CHECK(r1.predicted_class == r2.predicted_class);
  for (size_t k = 0; k + 1 < net.layers.size(); ++k)
    CHECK(std::get<BitTensor>(plain.slots[k]) == std::get<BitTensor>(hooked.slots[k]));
}

TEST_CASE("persistent activation faults re-corrupt rewritten buffers") {
  NetworkTopology net = build_lfc(64, Precision::W1A1);
  test::randomize_network(net, 10);
  SplitMix64 rng(11);
  const IntTensor image = test::random_image(rng, Shape{784});

  ActivationBuffer clean = ActivationBuffer::for_network(net);
  forward(net, image, nullptr, clean);

  const MemoryMap map = build_memory_map(net, MapTarget::activations());
  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  FaultOverlay overlay(net, map, Persistence::PersistentRead);
  overlay.attach(buffers);
  const uint64_t addr = 5;  // bit 5 of layer 0's buffer
  overlay.apply_addresses(std::vector<uint64_t>{addr});
  forward(net, image, &overlay, buffers);  // rewrites every buffer
  const auto& faulted = std::get<BitTensor>(buffers.slots[0]);
  const auto& ref = std::get<BitTensor>(clean.slots[0]);
  CHECK(faulted.get(5) == !ref.get(5));  // still corrupted after the rewrite
  for (size_t i = 0; i < 64; ++i)
    if (i != 5) CHECK(faulted.get(i) == ref.get(i));
}

TEST_CASE("transient activation faults clear on the next write") {
  NetworkTopology net = build_lfc(64, Precision::W1A1);
  test::randomize_network(net, 12);
  SplitMix64 rng(13);
  const IntTensor image = test::random_image(rng, Shape{784});

  ActivationBuffer clean = ActivationBuffer::for_network(net);
  const ForwardResult ref = forward(net, image, nullptr, clean);

  const MemoryMap map = build_memory_map(net, MapTarget::activations());
  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  FaultOverlay overlay(net, map, Persistence::TransientWrite);
  overlay.attach(buffers);
  overlay.apply_addresses(std::vector<uint64_t>{7});
  const ForwardResult r = forward(net, image, &overlay, buffers);  // inference rewrites the buffer
  CHECK(r.scores == ref.scores);
  for (size_t k = 0; k + 1 < net.layers.size(); ++k)
    CHECK(std::get<BitTensor>(buffers.slots[k]) == std::get<BitTensor>(clean.slots[k]));
}

TEST_CASE("no overlay state survives a trial (fresh overlay per trial)") {
  NetworkTopology net = build_lfc(32, Precision::W1A1);
  test::randomize_network(net, 14);
  SplitMix64 rng(15);
  const IntTensor image = test::random_image(rng, Shape{784});
  const MemoryMap map = build_memory_map(net, MapTarget::weights());

  ActivationBuffer clean = ActivationBuffer::for_network(net);
  const ForwardResult ref = forward(net, image, nullptr, clean);
  {
    FaultOverlay overlay(net, map, Persistence::PersistentRead);
    ActivationBuffer buffers = ActivationBuffer::for_network(net);
    overlay.attach(buffers);
    std::vector<uint64_t> addrs;
    for (int i = 0; i < 64; ++i) addrs.push_back(rng.uniform_below(map.total_bits));
    overlay.apply_addresses(addrs);
    forward(net, image, &overlay, buffers);
  }
  // The overlay owned every piece of fault state; a new trial starts clean.
  FaultOverlay next(net, map, Persistence::PersistentRead);
  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  next.attach(buffers);
  const ForwardResult r = forward(net, image, &next, buffers);
  CHECK(r.scores == ref.scores);
}

TEST_CASE("fault site CSV round trip") {
  std::vector<std::vector<FaultSite>> sites(3);
  sites[0] = {{12, 3, FaultModel::SEU}, {900, 7, FaultModel::SEU}};
  sites[2] = {{5, 0, FaultModel::MBU8}};
  std::ostringstream out;
  write_fault_sites_csv(out, sites);

  std::istringstream in(out.str());
  const auto back = read_fault_sites_csv(in);
  REQUIRE(back.size() == 3);
  CHECK(back[0].size() == 2);
  CHECK(back[1].empty());
  CHECK(back[2].size() == 1);
  CHECK(back[0][1].bit_address == 900);
  CHECK(back[0][1].time_index == 7);
  CHECK(back[2][0].model == FaultModel::MBU8);

  std::istringstream bad("not,a,header\n");
  CHECK_THROWS_AS(read_fault_sites_csv(bad), Error);
  std::istringstream bad_model("trial,bit_address,time_index,model\n0,1,2,XXX\n");
  CHECK_THROWS_AS(read_fault_sites_csv(bad_model), Error);
}

}  // TEST_SUITE
