#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fasco/calibrate.hpp"
#include "fasco/catalog.hpp"
#include "fasco/model.hpp"
#include "fasco/plan.hpp"
#include "fasco/util.hpp"

namespace fasco {

// Single-file container: "FSCO" magic, format version, payload kind, named
// sections, and a trailing fnv1a checksum over the section region. All
// integers little-endian fixed-width.
enum class FileKind : std::uint32_t { Model = 1, Catalog = 2, Tables = 3, LookupList = 4 };

inline constexpr std::uint32_t kFileVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void strings(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::string context)
      : data_(data), size_(size), context_(std::move(context)) {}

  std::uint32_t u32() { return fixed<std::uint32_t>(); }
  std::uint64_t u64() { return fixed<std::uint64_t>(); }
  double f64() { return fixed<double>(); }

  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    std::uint64_t n = u64();
    need(n * sizeof(double));
    std::vector<double> v(static_cast<std::size_t>(n));
    std::memcpy(v.data(), data_ + pos_, static_cast<std::size_t>(n) * sizeof(double));
    pos_ += static_cast<std::size_t>(n) * sizeof(double);
    return v;
  }
  std::vector<std::string> strings() {
    std::uint64_t n = u64();
    std::vector<std::string> v;
    v.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) v.push_back(str());
    return v;
  }

  void skip(std::uint64_t n) {
    need(n);
    pos_ += static_cast<std::size_t>(n);
  }
  std::size_t pos() const { return pos_; }
  void expect_end() const {
    if (pos_ != size_) throw io_error(context_ + ": trailing bytes");
  }

 private:
  template <typename T>
  T fixed() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) throw io_error(context_ + ": truncated");
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw io_error("cannot replace '" + path.string() + "': " + ec.message());
  }
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace detail

class ContainerWriter {
 public:
  explicit ContainerWriter(FileKind kind) : kind_(kind) {}

  detail::ByteWriter& section(const std::string& name) {
    sections_.emplace_back(name, detail::ByteWriter{});
    return sections_.back().second;
  }

  void save(const std::filesystem::path& path) const {
    detail::ByteWriter body;
    for (const auto& [name, w] : sections_) {
      body.str(name);
      body.u64(w.bytes().size());
      body.raw(w.bytes().data(), w.bytes().size());
    }
    detail::ByteWriter file;
    file.raw("FSCO", 4);
    file.u32(kFileVersion);
    file.u32(static_cast<std::uint32_t>(kind_));
    file.u32(static_cast<std::uint32_t>(sections_.size()));
    file.raw(body.bytes().data(), body.bytes().size());
    file.u64(fnv1a64(body.bytes().data(), body.bytes().size()));
    detail::atomic_write(path, file.bytes());
  }

 private:
  FileKind kind_;
  std::vector<std::pair<std::string, detail::ByteWriter>> sections_;
};

class ContainerReader {
 public:
  ContainerReader(const std::filesystem::path& path, FileKind expected)
      : bytes_(detail::read_file(path)), name_(path.string()) {
    constexpr std::size_t header = 16;
    if (bytes_.size() < header + 8) throw io_error(name_ + ": truncated");
    if (std::memcmp(bytes_.data(), "FSCO", 4) != 0) throw io_error(name_ + ": bad magic");
    std::uint32_t version, kind, count;
    std::memcpy(&version, bytes_.data() + 4, 4);
    std::memcpy(&kind, bytes_.data() + 8, 4);
    std::memcpy(&count, bytes_.data() + 12, 4);
    if (version != kFileVersion)
      throw io_error(name_ + ": unsupported version " + std::to_string(version));
    if (kind != static_cast<std::uint32_t>(expected))
      throw io_error(name_ + ": wrong file kind " + std::to_string(kind));

    const std::size_t body_size = bytes_.size() - header - 8;
    std::uint64_t stored;
    std::memcpy(&stored, bytes_.data() + header + body_size, 8);
    if (stored != fnv1a64(bytes_.data() + header, body_size))
      throw io_error(name_ + ": checksum mismatch");

    detail::ByteReader r(bytes_.data() + header, body_size, name_);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string sec = r.str();
      std::uint64_t size = r.u64();
      std::size_t offset = header + r.pos();
      r.skip(size);
      offsets_[sec] = {offset, static_cast<std::size_t>(size)};
    }
    r.expect_end();
  }

  detail::ByteReader section(const std::string& name) const {
    auto it = offsets_.find(name);
    if (it == offsets_.end()) throw io_error(name_ + ": missing section '" + name + "'");
    return {bytes_.data() + it->second.first, it->second.second, name_ + " [" + name + "]"};
  }

  bool has(const std::string& name) const { return offsets_.count(name) > 0; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::string name_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> offsets_;
};

// ---------------------------------------------------------------------------
// model

namespace detail {

inline void write_stack(ByteWriter& w, const DenseStack& s) {
  w.u32(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.u32(static_cast<std::uint32_t>(l.in));
    w.u32(static_cast<std::uint32_t>(l.out));
    w.u32(static_cast<std::uint32_t>(l.act));
    w.doubles(l.weight);
    w.doubles(l.bias);
  }
}

inline DenseStack read_stack(ByteReader& r, const std::string& what) {
  DenseStack s;
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    DenseLayer l;
    l.in = static_cast<int>(r.u32());
    l.out = static_cast<int>(r.u32());
    std::uint32_t act = r.u32();
    if (act > 2) throw io_error(what + ": unknown activation " + std::to_string(act));
    l.act = static_cast<Activation>(act);
    l.weight = r.doubles();
    l.bias = r.doubles();
    if (l.in < 1 || l.out < 1 ||
        l.weight.size() != static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out) ||
        l.bias.size() != static_cast<std::size_t>(l.out))
      throw io_error(what + ": shape mismatch");
    if (i > 0 && l.in != s.layers.back().out) throw io_error(what + ": shape mismatch");
    s.layers.push_back(std::move(l));
  }
  r.expect_end();
  return s;
}

inline void write_vocab(ByteWriter& w, const Vocabulary& v) {
  w.u32(v.has_no_join ? 1 : 0);
  w.strings(v.entries);
}

inline Vocabulary read_vocab(ByteReader& r, const std::string& what) {
  Vocabulary v;
  v.has_no_join = r.u32() != 0;
  v.entries = r.strings();
  if (!std::is_sorted(v.entries.begin(), v.entries.end()))
    throw io_error(what + ": vocabulary entries out of order");
  r.expect_end();
  return v;
}

inline void write_embedding(ByteWriter& w, const EmbeddingTable& e) {
  w.u32(static_cast<std::uint32_t>(e.vocab));
  w.u32(static_cast<std::uint32_t>(e.dim));
  w.doubles(e.table);
}

inline EmbeddingTable read_embedding(ByteReader& r, const std::string& what) {
  EmbeddingTable e;
  e.vocab = static_cast<int>(r.u32());
  e.dim = static_cast<int>(r.u32());
  e.table = r.doubles();
  if (e.vocab < 1 || e.dim < 1 ||
      e.table.size() != static_cast<std::size_t>(e.vocab) * static_cast<std::size_t>(e.dim))
    throw io_error(what + ": shape mismatch");
  r.expect_end();
  return e;
}

}  // namespace detail

inline void save_model(const std::filesystem::path& path, const ModelParams& p) {
  ContainerWriter c(FileKind::Model);
  auto& meta = c.section("meta");
  meta.u32(static_cast<std::uint32_t>(p.dims.embed_dim));
  meta.u32(static_cast<std::uint32_t>(p.dims.state_dim));
  meta.u32(static_cast<std::uint32_t>(p.dims.hidden_dim));
  meta.u32(static_cast<std::uint32_t>(p.dims.backbone_layers));
  meta.u32(static_cast<std::uint32_t>(p.dims.state_layers));
  meta.u32(static_cast<std::uint32_t>(p.dims.cost_layers));
  meta.f64(p.normalizer);
  meta.f64(p.config.lr);
  meta.u32(static_cast<std::uint32_t>(p.config.epochs));
  meta.u64(p.config.seed);
  meta.f64(p.config.weights.lambda_default);
  meta.f64(p.config.weights.lambda_nonindex);
  meta.f64(p.config.weights.lambda_last);
  meta.u32(p.config.calibration_enabled ? 1 : 0);
  meta.strings({p.config.index_ops.begin(), p.config.index_ops.end()});
  detail::write_vocab(c.section("vocab_ops"), p.op_vocab);
  detail::write_vocab(c.section("vocab_joinkeys"), p.joinkey_vocab);
  detail::write_embedding(c.section("emb_op"), p.op_embedding);
  detail::write_embedding(c.section("emb_joinkey"), p.joinkey_embedding);
  detail::write_stack(c.section("stack_backbone"), p.backbone);
  detail::write_stack(c.section("stack_state"), p.state_head);
  detail::write_stack(c.section("stack_cost"), p.cost_head);
  c.save(path);
}

inline ModelParams load_model(const std::filesystem::path& path) {
  ContainerReader c(path, FileKind::Model);
  ModelParams p;
  auto meta = c.section("meta");
  p.dims.embed_dim = static_cast<int>(meta.u32());
  p.dims.state_dim = static_cast<int>(meta.u32());
  p.dims.hidden_dim = static_cast<int>(meta.u32());
  p.dims.backbone_layers = static_cast<int>(meta.u32());
  p.dims.state_layers = static_cast<int>(meta.u32());
  p.dims.cost_layers = static_cast<int>(meta.u32());
  p.normalizer = meta.f64();
  p.config.lr = meta.f64();
  p.config.epochs = static_cast<int>(meta.u32());
  p.config.seed = meta.u64();
  p.config.weights.lambda_default = meta.f64();
  p.config.weights.lambda_nonindex = meta.f64();
  p.config.weights.lambda_last = meta.f64();
  p.config.calibration_enabled = meta.u32() != 0;
  auto ops = meta.strings();
  p.config.index_ops = {ops.begin(), ops.end()};
  p.config.dims = p.dims;
  meta.expect_end();

  auto v1 = c.section("vocab_ops");
  p.op_vocab = detail::read_vocab(v1, path.string() + " [vocab_ops]");
  auto v2 = c.section("vocab_joinkeys");
  p.joinkey_vocab = detail::read_vocab(v2, path.string() + " [vocab_joinkeys]");
  auto e1 = c.section("emb_op");
  p.op_embedding = detail::read_embedding(e1, path.string() + " [emb_op]");
  auto e2 = c.section("emb_joinkey");
  p.joinkey_embedding = detail::read_embedding(e2, path.string() + " [emb_joinkey]");
  auto s1 = c.section("stack_backbone");
  p.backbone = detail::read_stack(s1, path.string() + " [stack_backbone]");
  auto s2 = c.section("stack_state");
  p.state_head = detail::read_stack(s2, path.string() + " [stack_state]");
  auto s3 = c.section("stack_cost");
  p.cost_head = detail::read_stack(s3, path.string() + " [stack_cost]");

  const InputLayout L = p.layout();
  const bool consistent =
      p.op_embedding.vocab == p.op_vocab.size() && p.op_embedding.dim == p.dims.embed_dim &&
      p.joinkey_embedding.vocab == p.joinkey_vocab.size() &&
      p.joinkey_embedding.dim == p.dims.embed_dim && p.backbone.input_dim() == L.total() &&
      p.state_head.input_dim() == p.backbone.output_dim() &&
      p.state_head.output_dim() == p.dims.state_dim &&
      p.cost_head.input_dim() == p.backbone.output_dim() && p.cost_head.output_dim() == 1;
  if (!consistent) throw io_error(path.string() + ": shape mismatch");
  return p;
}

// ---------------------------------------------------------------------------
// catalog

inline void save_catalog(const std::filesystem::path& path, const Catalog& cat) {
  ContainerWriter c(FileKind::Catalog);
  auto& t = c.section("tables");
  t.u64(cat.tables.size());
  for (const auto& [name, rows] : cat.tables) {
    t.str(name);
    t.f64(rows);
  }
  auto& h = c.section("columns");
  h.u64(cat.columns.size());
  for (const auto& [id, hist] : cat.columns) {
    h.str(id);
    h.doubles(hist.edges);
    h.doubles(hist.counts);
  }
  auto& j = c.section("join_pairs");
  j.u64(cat.join_pairs.size());
  for (const auto& d : cat.join_pairs) {
    j.str(d.table_a);
    j.str(d.table_b);
    j.str(d.key_a);
    j.str(d.key_b);
  }
  c.save(path);
}

inline Catalog load_catalog(const std::filesystem::path& path) {
  ContainerReader c(path, FileKind::Catalog);
  Catalog cat;
  auto t = c.section("tables");
  for (std::uint64_t i = 0, n = t.u64(); i < n; ++i) {
    std::string name = t.str();
    cat.tables[name] = t.f64();
  }
  t.expect_end();
  auto h = c.section("columns");
  for (std::uint64_t i = 0, n = h.u64(); i < n; ++i) {
    std::string id = h.str();
    Histogram hist;
    hist.edges = h.doubles();
    hist.counts = h.doubles();
    if (hist.edges.size() != hist.counts.size() + 1 || hist.counts.empty())
      throw io_error(path.string() + ": histogram shape mismatch for '" + id + "'");
    cat.columns[id] = std::move(hist);
  }
  h.expect_end();
  auto j = c.section("join_pairs");
  for (std::uint64_t i = 0, n = j.u64(); i < n; ++i) {
    JoinPairDecl d;
    d.table_a = j.str();
    d.table_b = j.str();
    d.key_a = j.str();
    d.key_b = j.str();
    cat.join_pairs.push_back(std::move(d));
  }
  j.expect_end();
  return cat;
}

// ---------------------------------------------------------------------------
// table data

inline void save_tables(const std::filesystem::path& path, const TableSet& tables) {
  ContainerWriter c(FileKind::Tables);
  auto& w = c.section("tables");
  w.u64(tables.size());
  for (const auto& [name, t] : tables) {
    w.str(t.name);
    w.strings(t.columns);
    for (const auto& col : t.cells) w.doubles(col);
  }
  c.save(path);
}

inline TableSet load_tables(const std::filesystem::path& path) {
  ContainerReader c(path, FileKind::Tables);
  TableSet out;
  auto r = c.section("tables");
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    TableData t;
    t.name = r.str();
    t.columns = r.strings();
    t.cells.reserve(t.columns.size());
    for (std::size_t ci = 0; ci < t.columns.size(); ++ci) t.cells.push_back(r.doubles());
    for (const auto& col : t.cells)
      if (col.size() != t.cells.front().size())
        throw io_error(path.string() + ": ragged columns in table '" + t.name + "'");
    out[t.name] = std::move(t);
  }
  r.expect_end();
  return out;
}

// ---------------------------------------------------------------------------
// lookup lists

inline void save_lookup_list(const std::filesystem::path& path, const LookupList& list) {
  ContainerWriter c(FileKind::LookupList);
  auto& m = c.section("meta");
  m.str(list.pair.table_a);
  m.str(list.pair.table_b);
  m.str(list.pair.key_a);
  m.str(list.pair.key_b);
  m.f64(list.inv_sample_rate);
  m.u64(list.built_at);
  c.section("columns").strings(list.columns);
  c.section("rows").doubles(list.rows);
  c.save(path);
}

inline LookupList load_lookup_list(const std::filesystem::path& path) {
  ContainerReader c(path, FileKind::LookupList);
  LookupList list;
  auto m = c.section("meta");
  list.pair.table_a = m.str();
  list.pair.table_b = m.str();
  list.pair.key_a = m.str();
  list.pair.key_b = m.str();
  list.inv_sample_rate = m.f64();
  list.built_at = m.u64();
  m.expect_end();
  auto cols = c.section("columns");
  list.columns = cols.strings();
  cols.expect_end();
  auto rows = c.section("rows");
  list.rows = rows.doubles();
  rows.expect_end();
  if (list.columns.empty() || list.rows.size() % list.columns.size() != 0)
    throw io_error(path.string() + ": shape mismatch");
  if (list.inv_sample_rate < 1.0) throw io_error(path.string() + ": bad sample rate");
  return list;
}

inline std::string lookup_file_name(const PairKey& pair) {
  std::string id = pair.id();
  std::string safe;
  safe.reserve(id.size());
  for (char ch : id) {
    bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
              ch == '.' || ch == '_' || ch == '-';
    safe.push_back(ok ? ch : '_');
  }
  return safe + "-" + detail::hex64(fnv1a64(id)) + ".fll";
}

// Mirrors the store into `dir`: one file per pair, stale files removed.
inline void save_lookup_store(const std::filesystem::path& dir, const LookupStore& store) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::set<std::string> expected;
  for (const auto& list : store.all()) {
    std::string name = lookup_file_name(list->pair);
    expected.insert(name);
    save_lookup_list(dir / name, *list);
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".fll") continue;
    if (!expected.count(entry.path().filename().string())) fs::remove(entry.path());
  }
}

inline LookupStore load_lookup_store(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  LookupStore store;
  if (!fs::exists(dir)) throw io_error("lookup directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".fll")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) store.put(load_lookup_list(f));
  return store;
}

// ---------------------------------------------------------------------------
// plans (JSON)

inline void save_plan_file(const std::filesystem::path& path, const PlanTree& tree) {
  std::string text = serialize_plan(tree).dump(2);
  text.push_back('\n');
  detail::atomic_write(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline PlanTree load_plan_file(const std::filesystem::path& path) {
  auto bytes = detail::read_file(path);
  try {
    return parse_plan(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const parse_error& e) {
    throw parse_error(path.string() + ": " + e.what());
  }
}

inline std::vector<PlanTree> load_plan_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir)) throw io_error("plan directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<PlanTree> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_plan_file(f));
  return out;
}

}  // namespace fasco
