#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <unordered_map>
#include <vector>

#include "bnnfi/network.hpp"
#include "bnnfi/rng.hpp"

namespace bnnfi {

enum class StorageKind : uint8_t { Weights, Activations };

enum class FaultModel : uint8_t { SEU, MBU8 };

// PersistentRead models a damaged cell: from the fault's time onward every
// read of the word sees the stored value XOR the mask, and rewritten
// activations are re-corrupted. TransientWrite flips the current content
// once; the next write to the location clears it.
enum class Persistence : uint8_t { PersistentRead, TransientWrite };

const char* to_string(StorageKind kind);
const char* to_string(FaultModel model);
const char* to_string(Persistence mode);

// What the memory map covers: all weights, all activation buffers, or a
// single layer's storage of one kind.
struct MapTarget {
  enum class Kind : uint8_t { Weights, Activations, Layer } kind = Kind::Weights;
  size_t layer_index = 0;       // valid when kind == Layer
  StorageKind storage = StorageKind::Weights;  // valid when kind == Layer

  static MapTarget weights() { return {Kind::Weights, 0, StorageKind::Weights}; }
  static MapTarget activations() { return {Kind::Activations, 0, StorageKind::Activations}; }
  static MapTarget layer(size_t index, StorageKind storage) {
    return {Kind::Layer, index, storage};
  }
};

std::string to_string(const MapTarget& target);
MapTarget parse_map_target(const std::string& text);

struct MemRegion {
  size_t layer;
  StorageKind storage;
  uint64_t start_bit;
  uint64_t bit_length;
};

// Linear bit-address space concatenating the bit-packed payloads of the
// targeted storage, in layer order. Fault addresses are defined over this
// space, so the packing (64-bit little-endian words) is part of the contract.
struct MemoryMap {
  std::vector<MemRegion> regions;
  uint64_t total_bits = 0;

  size_t region_index_of(uint64_t bit_address) const;
  const MemRegion& region_of(uint64_t bit_address) const {
    return regions[region_index_of(bit_address)];
  }
};

MemoryMap build_memory_map(const NetworkTopology& net, const MapTarget& target);

struct FaultSite {
  uint64_t bit_address = 0;   // in [0, map.total_bits)
  uint32_t time_index = 0;    // inference index in [0, workload_len)
  FaultModel model = FaultModel::SEU;
};

// n independent sites, bit_address ~ U[0, total_bits) and time_index
// ~ U[0, workload_len), sorted by time_index (stable, so equal times keep
// sampling order).
std::vector<FaultSite> sample_faults(SplitMix64& rng, size_t n, const MemoryMap& map,
                                     uint32_t workload_len, FaultModel model);

// Burst addresses {a .. a+7} clipped at the map end; bursts may cross
// tensor/layer boundaries inside the map.
std::vector<uint64_t> expand_mbu(const FaultSite& site, const MemoryMap& map);

// Per-trial XOR overlay over the mapped storage. Owns faulted weight copies
// (copy-on-fault) and persistent activation masks; attach() binds the trial's
// activation buffers so activation flips land in them.
class FaultOverlay {
public:
  FaultOverlay(const NetworkTopology& net, const MemoryMap& map, Persistence mode);

  void attach(ActivationBuffer& buffers) { buffers_ = &buffers; }

  // Schedules sites (must be sorted by time_index, as sample_faults returns).
  void arm(std::vector<FaultSite> sites);

  // Applies every armed site with time_index <= now that has not been applied
  // yet. Called before each image's inference.
  void activate_due(uint32_t now);

  // Immediately XORs the given map addresses into the backing storage.
  void apply_addresses(std::span<const uint64_t> addresses);

  // Read of one 64-bit word of a region's tensor as inference would see it.
  uint64_t read_word(size_t region_index, size_t word_index) const;

  // Weight words of a layer: the faulted copy when one exists, otherwise the
  // clean tensor. Valid for any weight-bearing layer, mapped or not.
  std::span<const uint64_t> weight_words(size_t layer) const;

  // Called after a layer's activation buffer has been (re)written.
  void on_activation_write(size_t layer, std::span<uint64_t> buffer_words);

  bool any_applied() const { return applied_any_; }
  bool layer_weights_dirty(size_t layer) const { return weight_copies_.count(layer) != 0; }
  Persistence mode() const { return mode_; }
  const MemoryMap& map() const { return *map_; }

private:
  std::span<const uint64_t> storage_words(const MemRegion& region) const;
  void flip_bit(const MemRegion& region, uint64_t local_bit);

  const NetworkTopology* net_;
  const MemoryMap* map_;
  Persistence mode_;
  ActivationBuffer* buffers_ = nullptr;
  std::vector<FaultSite> sites_;
  size_t next_site_ = 0;
  bool applied_any_ = false;
  std::map<size_t, std::vector<uint64_t>> weight_copies_;                    // layer -> words
  std::map<size_t, std::unordered_map<uint32_t, uint64_t>> act_masks_;      // layer -> word -> mask
};

// Fault-site CSV (`trial,bit_address,time_index,model`) for replay.
void write_fault_sites_csv(std::ostream& out,
                           const std::vector<std::vector<FaultSite>>& sites_per_trial);
std::vector<std::vector<FaultSite>> read_fault_sites_csv(std::istream& in);

}  // namespace bnnfi
