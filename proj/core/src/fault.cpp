#include "bnnfi/fault.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "bnnfi/error.hpp"

namespace bnnfi {

const char* to_string(StorageKind kind) {
  return kind == StorageKind::Weights ? "weights" : "activations";
}

const char* to_string(FaultModel model) { return model == FaultModel::SEU ? "SEU" : "MBU8"; }

const char* to_string(Persistence mode) {
  return mode == Persistence::PersistentRead ? "persistent_read" : "transient_write";
}

std::string to_string(const MapTarget& target) {
  switch (target.kind) {
    case MapTarget::Kind::Weights: return "weights";
    case MapTarget::Kind::Activations: return "activations";
    case MapTarget::Kind::Layer:
      return "layer:" + std::to_string(target.layer_index) + ":" + to_string(target.storage);
  }
  return "?";
}

MapTarget parse_map_target(const std::string& text) {
  if (text == "weights") return MapTarget::weights();
  if (text == "activations") return MapTarget::activations();
  if (text.rfind("layer:", 0) == 0) {
    const size_t second = text.find(':', 6);
    if (second != std::string::npos) {
      const std::string index = text.substr(6, second - 6);
      const std::string kind = text.substr(second + 1);
      size_t layer = 0;
      const auto [p, ec] = std::from_chars(index.data(), index.data() + index.size(), layer);
      if (ec == std::errc() && p == index.data() + index.size()) {
        if (kind == "weights") return MapTarget::layer(layer, StorageKind::Weights);
        if (kind == "activations") return MapTarget::layer(layer, StorageKind::Activations);
      }
    }
  }
  raise(Errc::invalid_argument,
        "bad target '" + text + "' (expected weights | activations | layer:<k>:<weights|activations>)");
}

size_t MemoryMap::region_index_of(uint64_t bit_address) const {
  if (bit_address >= total_bits) raise(Errc::out_of_range, "bit address out of map range");
  // First region whose start is past the address, minus one.
  size_t lo = 0, hi = regions.size();
  while (lo + 1 < hi) {
    const size_t mid = (lo + hi) / 2;
    if (regions[mid].start_bit <= bit_address)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

MemoryMap build_memory_map(const NetworkTopology& net, const MapTarget& target) {
  MemoryMap map;
  auto add_region = [&](size_t layer, StorageKind storage, uint64_t bits) {
    if (bits == 0) return;
    map.regions.push_back({layer, storage, map.total_bits, bits});
    map.total_bits += bits;
  };
  switch (target.kind) {
    case MapTarget::Kind::Weights:
      for (size_t k = 0; k < net.layers.size(); ++k)
        add_region(k, StorageKind::Weights, net.layers[k].weight_bits());
      break;
    case MapTarget::Kind::Activations:
      for (size_t k = 0; k < net.layers.size(); ++k)
        add_region(k, StorageKind::Activations, net.layers[k].activation_bits(net.precision));
      break;
    case MapTarget::Kind::Layer: {
      if (target.layer_index >= net.layers.size())
        raise(Errc::out_of_range, "target layer " + std::to_string(target.layer_index) + " does not exist");
      const LayerSpec& l = net.layers[target.layer_index];
      if (target.storage == StorageKind::Weights) {
        if (!l.has_weights())
          raise(Errc::invalid_argument,
                "layer " + std::to_string(target.layer_index) + " has no weight storage");
        add_region(target.layer_index, StorageKind::Weights, l.weight_bits());
      } else {
        const uint64_t bits = l.activation_bits(net.precision);
        if (bits == 0)
          raise(Errc::invalid_argument,
                "layer " + std::to_string(target.layer_index) + " has no activation storage");
        add_region(target.layer_index, StorageKind::Activations, bits);
      }
      break;
    }
  }
  return map;
}

std::vector<FaultSite> sample_faults(SplitMix64& rng, size_t n, const MemoryMap& map,
                                     uint32_t workload_len, FaultModel model) {
  if (n < 1) raise(Errc::invalid_argument, "sample_faults: fault count must be >= 1");
  if (workload_len < 1) raise(Errc::invalid_argument, "sample_faults: workload must be >= 1");
  if (map.total_bits == 0) raise(Errc::empty_input, "sample_faults: empty memory map");
  std::vector<FaultSite> sites(n);
  for (FaultSite& s : sites) {
    s.bit_address = rng.uniform_below(map.total_bits);
    s.time_index = uint32_t(rng.uniform_below(workload_len));
    s.model = model;
  }
  std::stable_sort(sites.begin(), sites.end(),
                   [](const FaultSite& a, const FaultSite& b) { return a.time_index < b.time_index; });
  return sites;
}

std::vector<uint64_t> expand_mbu(const FaultSite& site, const MemoryMap& map) {
  if (site.model != FaultModel::MBU8)
    raise(Errc::invalid_argument, "expand_mbu: site is not an MBU");
  if (site.bit_address >= map.total_bits) raise(Errc::out_of_range, "expand_mbu: address out of range");
  std::vector<uint64_t> out;
  const uint64_t end = std::min<uint64_t>(site.bit_address + 8, map.total_bits);
  for (uint64_t a = site.bit_address; a < end; ++a) out.push_back(a);
  return out;
}

// ---------------------------------------------------------------------------
// FaultOverlay

FaultOverlay::FaultOverlay(const NetworkTopology& net, const MemoryMap& map, Persistence mode)
    : net_(&net), map_(&map), mode_(mode) {}

void FaultOverlay::arm(std::vector<FaultSite> sites) {
  std::stable_sort(sites.begin(), sites.end(),
                   [](const FaultSite& a, const FaultSite& b) { return a.time_index < b.time_index; });
  sites_ = std::move(sites);
  next_site_ = 0;
}

void FaultOverlay::activate_due(uint32_t now) {
  while (next_site_ < sites_.size() && sites_[next_site_].time_index <= now) {
    const FaultSite& site = sites_[next_site_++];
    if (site.model == FaultModel::SEU) {
      const uint64_t addr = site.bit_address;
      apply_addresses(std::span<const uint64_t>(&addr, 1));
    } else {
      const std::vector<uint64_t> burst = expand_mbu(site, *map_);
      apply_addresses(burst);
    }
  }
}

std::span<const uint64_t> FaultOverlay::storage_words(const MemRegion& region) const {
  if (region.storage == StorageKind::Weights)
    return std::visit([](const auto& t) { return t.words(); }, *net_->layers[region.layer].weights);
  if (!buffers_)
    raise(Errc::invalid_argument, "overlay has no activation buffers attached");
  return std::visit([](const auto& t) -> std::span<const uint64_t> { return t.words(); },
                    buffers_->slots[region.layer]);
}

void FaultOverlay::flip_bit(const MemRegion& region, uint64_t local_bit) {
  const size_t word = size_t(local_bit >> 6);
  const uint64_t mask = uint64_t(1) << (local_bit & 63);
  if (region.storage == StorageKind::Weights) {
    auto it = weight_copies_.find(region.layer);
    if (it == weight_copies_.end()) {
      const auto clean = storage_words(region);
      it = weight_copies_.emplace(region.layer, std::vector<uint64_t>(clean.begin(), clean.end()))
               .first;
    }
    it->second[word] ^= mask;
    return;
  }
  if (!buffers_) raise(Errc::invalid_argument, "activation fault with no buffers attached");
  auto buf = std::visit([](auto& t) { return t.words(); }, buffers_->slots[region.layer]);
  buf[word] ^= mask;
  if (mode_ == Persistence::PersistentRead) act_masks_[region.layer][uint32_t(word)] ^= mask;
  // TransientWrite keeps no mask: the next buffer write supersedes the flip.
}

void FaultOverlay::apply_addresses(std::span<const uint64_t> addresses) {
  for (uint64_t addr : addresses) {
    const MemRegion& region = map_->region_of(addr);
    flip_bit(region, addr - region.start_bit);
    applied_any_ = true;
  }
}

uint64_t FaultOverlay::read_word(size_t region_index, size_t word_index) const {
  if (region_index >= map_->regions.size()) raise(Errc::out_of_range, "bad region index");
  const MemRegion& region = map_->regions[region_index];
  std::span<const uint64_t> words;
  if (region.storage == StorageKind::Weights) {
    words = weight_words(region.layer);
  } else {
    words = storage_words(region);
  }
  if (word_index >= words.size()) raise(Errc::out_of_range, "word index out of range");
  return words[word_index];
}

std::span<const uint64_t> FaultOverlay::weight_words(size_t layer) const {
  const auto it = weight_copies_.find(layer);
  if (it != weight_copies_.end()) return it->second;
  if (!net_->layers[layer].weights)
    raise(Errc::invalid_argument, "layer " + std::to_string(layer) + " has no weights");
  return std::visit([](const auto& t) { return t.words(); }, *net_->layers[layer].weights);
}

void FaultOverlay::on_activation_write(size_t layer, std::span<uint64_t> buffer_words) {
  if (mode_ != Persistence::PersistentRead) return;
  const auto it = act_masks_.find(layer);
  if (it == act_masks_.end()) return;
  for (const auto& [word, mask] : it->second) buffer_words[word] ^= mask;
}

// ---------------------------------------------------------------------------
// Fault-site CSV

void write_fault_sites_csv(std::ostream& out,
                           const std::vector<std::vector<FaultSite>>& sites_per_trial) {
  out << "trial,bit_address,time_index,model\n";
  for (size_t trial = 0; trial < sites_per_trial.size(); ++trial)
    for (const FaultSite& s : sites_per_trial[trial])
      out << trial << ',' << s.bit_address << ',' << s.time_index << ',' << to_string(s.model)
          << '\n';
}

std::vector<std::vector<FaultSite>> read_fault_sites_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) raise(Errc::truncated, "fault CSV: missing header");
  if (line == "trial,bit_address,time_index,model\r") line.pop_back();
  if (line != "trial,bit_address,time_index,model")
    raise(Errc::bad_payload, "fault CSV: unexpected header '" + line + "'");
  std::vector<std::vector<FaultSite>> trials;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    uint64_t values[3] = {0, 0, 0};
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(row, field, ','))
        raise(Errc::bad_payload, "fault CSV: short row at line " + std::to_string(line_no));
      const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), values[i]);
      if (ec != std::errc() || p != field.data() + field.size())
        raise(Errc::bad_payload, "fault CSV: bad number at line " + std::to_string(line_no));
    }
    if (!std::getline(row, field))
      raise(Errc::bad_payload, "fault CSV: missing model at line " + std::to_string(line_no));
    FaultSite site;
    site.bit_address = values[1];
    site.time_index = uint32_t(values[2]);
    if (field == "SEU")
      site.model = FaultModel::SEU;
    else if (field == "MBU8")
      site.model = FaultModel::MBU8;
    else
      raise(Errc::bad_payload, "fault CSV: unknown model '" + field + "'");
    if (values[0] >= trials.size()) trials.resize(values[0] + 1);
    trials[values[0]].push_back(site);
  }
  return trials;
}

}  // namespace bnnfi
