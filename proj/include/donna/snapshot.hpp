// snapshot.hpp: binary weight snapshots.
//
// Format: magic "DNW1", then one record per tensor in model definition
// order. Record: u32 name length, UTF-8 name, u32 rank, rank u32 dims,
// numel fp64 values. All integers and doubles little-endian. Batchnorm
// running statistics are stored as ordinary records under reserved
// ".running_mean" / ".running_var" name suffixes.
#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "donna/common.hpp"
#include "donna/layers.hpp"

namespace donna {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  out.append(b, 4);
}

inline std::uint32_t get_u32(const std::string& s, std::size_t& off) {
  check(off + 4 <= s.size(), "snapshot: truncated");
  const auto* p = reinterpret_cast<const unsigned char*>(s.data() + off);
  off += 4;
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void append_record(std::string& out, const std::string& name,
                          const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
  }
  const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
  const std::size_t pos = out.size();
  out.resize(pos + bytes);
  std::memcpy(out.data() + pos, t.data(), bytes);
}

}  // namespace detail

inline std::string snapshot_bytes(Layer& root) {
  std::vector<NamedParam> ps;
  std::vector<NamedBuffer> bs;
  root.collect("", ps, bs);
  std::string out = "DNW1";
  for (const auto& p : ps) detail::append_record(out, p.name, p.param->value);
  for (const auto& b : bs) detail::append_record(out, b.name, *b.tensor);
  return out;
}

inline void save_snapshot(Layer& root, const std::string& path) {
  write_file(path, snapshot_bytes(root));
}

struct SnapshotRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

inline std::vector<SnapshotRecord> parse_snapshot(const std::string& bytes) {
  check(bytes.size() >= 4 && bytes.compare(0, 4, "DNW1") == 0,
        "snapshot: bad magic, not a DNW1 file");
  std::vector<SnapshotRecord> recs;
  std::size_t off = 4;
  while (off < bytes.size()) {
    SnapshotRecord r;
    const std::uint32_t nlen = detail::get_u32(bytes, off);
    check(off + nlen <= bytes.size(), "snapshot: truncated name");
    r.name.assign(bytes, off, nlen);
    off += nlen;
    const std::uint32_t rank = detail::get_u32(bytes, off);
    check(rank <= 8, "snapshot: implausible rank in record '" + r.name + "'");
    long long numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = detail::get_u32(bytes, off);
      check(d > 0, "snapshot: zero dimension in record '" + r.name + "'");
      r.shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    const std::size_t nbytes = static_cast<std::size_t>(numel) * sizeof(double);
    check(off + nbytes <= bytes.size(),
          "snapshot: truncated payload in record '" + r.name + "'");
    r.data.resize(static_cast<std::size_t>(numel));
    std::memcpy(r.data.data(), bytes.data() + off, nbytes);
    off += nbytes;
    recs.push_back(std::move(r));
  }
  return recs;
}

inline void load_snapshot_bytes(Layer& root, const std::string& bytes) {
  auto recs = parse_snapshot(bytes);
  std::map<std::string, const SnapshotRecord*> by_name;
  for (const auto& r : recs) {
    check(by_name.emplace(r.name, &r).second,
          "snapshot: duplicate record '" + r.name + "'");
  }
  std::vector<NamedParam> ps;
  std::vector<NamedBuffer> bs;
  root.collect("", ps, bs);
  std::size_t used = 0;
  auto apply = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    check(it != by_name.end(), "snapshot: missing record '" + name + "'");
    const SnapshotRecord& r = *it->second;
    check(r.shape == dst.shape(),
          "snapshot: shape mismatch for '" + name + "', file has " +
              shape_to_str(r.shape) + ", model wants " + dst.shape_str());
    std::copy(r.data.begin(), r.data.end(), dst.data());
    ++used;
  };
  for (auto& p : ps) apply(p.name, p.param->value);
  for (auto& b : bs) apply(b.name, *b.tensor);
  check(used == by_name.size(),
        "snapshot: file contains " + std::to_string(by_name.size() - used) +
            " record(s) unknown to the model");
}

inline void load_snapshot(Layer& root, const std::string& path) {
  load_snapshot_bytes(root, read_file(path));
}

}  // namespace donna
