#include "condensa/store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <string>

#include <fmt/format.h>

#include "condensa/error.hpp"

namespace condensa::fmex {
namespace {

static_assert(std::endian::native == std::endian::little, "FMEX encoder assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, std::uint64_t base) : in_(in), base_(base) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::uint64_t offset() const { return base_ + pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw FormatError(fmt::format("truncated FMEX data reading {}", what), offset());
  }
  std::span<const std::uint8_t> in_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
};

template <typename T>
T narrow(std::size_t v, const char* what) {
  if (v > std::numeric_limits<T>::max()) {
    throw DomainError(fmt::format("FMEX: {} = {} does not fit the field", what, v));
  }
  return static_cast<T>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_container(std::span<const Section> sections) {
  Writer w;
  w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("FMEX"), 4));
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint16_t>(narrow<std::uint16_t>(sections.size(), "section count"));
  for (const auto& s : sections) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
    w.put<std::uint64_t>(s.payload.size());
    w.put_bytes(s.payload);
  }
  return w.take();
}

std::vector<Section> decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, 0);
  auto magic = r.get_bytes(4, "magic");
  if (std::memcmp(magic.data(), "FMEX", 4) != 0) throw FormatError("bad FMEX magic", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion) throw FormatError(fmt::format("unsupported FMEX version {}", version), 4);
  const auto count = r.get<std::uint16_t>("section count");
  std::vector<Section> sections;
  sections.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::uint64_t at = r.offset();
    const auto kind = r.get<std::uint8_t>("section kind");
    if (kind != 1 && kind != 2) throw FormatError(fmt::format("unknown FMEX section kind {}", kind), at);
    const auto len = r.get<std::uint64_t>("section length");
    if (len > r.remaining()) throw FormatError("FMEX section length exceeds file", r.offset() - 8);
    auto payload = r.get_bytes(static_cast<std::size_t>(len), "section payload");
    sections.push_back(Section{static_cast<SectionKind>(kind), {payload.begin(), payload.end()}});
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last FMEX section", r.offset());
  return sections;
}

std::vector<std::uint8_t> encode_exemplar(const CondensedExemplar& ex) {
  Writer w;
  w.put<std::uint32_t>(ex.label);
  w.put<std::uint8_t>(narrow<std::uint8_t>(ex.channels, "channels"));
  w.put<std::uint16_t>(narrow<std::uint16_t>(ex.height, "height"));
  w.put<std::uint16_t>(narrow<std::uint16_t>(ex.width, "width"));
  w.put<std::uint8_t>(ex.quantized ? 1 : 0);
  w.put<std::uint16_t>(narrow<std::uint16_t>(ex.weights_audit.size(), "weights audit length"));
  for (float v : ex.weights_audit) w.put<float>(v);
  const std::size_t n = ex.frames * ex.frame_size();
  if (ex.quantized) {
    if (ex.bytes.size() != n) throw DimensionError("encode_exemplar: pixel bytes do not match geometry");
    w.put_bytes(ex.bytes);
  } else {
    if (ex.values.size() != n) throw DimensionError("encode_exemplar: pixel values do not match geometry");
    for (float v : ex.values) w.put<float>(v);
  }
  return w.take();
}

CondensedExemplar decode_exemplar(std::span<const std::uint8_t> payload, std::uint64_t base) {
  Reader r(payload, base);
  CondensedExemplar ex;
  ex.label = r.get<std::uint32_t>("class id");
  ex.channels = r.get<std::uint8_t>("channels");
  ex.height = r.get<std::uint16_t>("height");
  ex.width = r.get<std::uint16_t>("width");
  const std::uint64_t qat = r.offset();
  const auto q = r.get<std::uint8_t>("quantized flag");
  if (q > 1) throw FormatError("quantized flag must be 0 or 1", qat);
  ex.quantized = q == 1;
  const auto T = r.get<std::uint16_t>("weights audit length");
  ex.weights_audit.resize(T);
  for (auto& v : ex.weights_audit) v = r.get<float>("weights audit");
  const std::size_t frame_bytes = ex.frame_size() * (ex.quantized ? 1 : sizeof(float));
  if (frame_bytes == 0 || r.remaining() == 0 || r.remaining() % frame_bytes != 0) {
    throw FormatError("exemplar pixel block is not a whole number of frames", r.offset());
  }
  ex.frames = r.remaining() / frame_bytes;
  if (ex.quantized) {
    auto px = r.get_bytes(r.remaining(), "pixels");
    ex.bytes.assign(px.begin(), px.end());
  } else {
    ex.values.resize(ex.frames * ex.frame_size());
    for (auto& v : ex.values) v = r.get<float>("pixels");
  }
  return ex;
}

std::vector<std::uint8_t> encode_params(const ModelParams& p) {
  Writer w;
  w.put<double>(p.shift_fold);
  const auto tensors = p.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.put<std::uint8_t>(narrow<std::uint8_t>(t.rank(), "rank"));
    for (std::size_t d : t.shape()) w.put<std::uint32_t>(narrow<std::uint32_t>(d, "extent"));
    for (double v : t.data()) w.put<double>(v);
  }
  return w.take();
}

ModelParams decode_params(std::span<const std::uint8_t> payload, std::uint64_t base) {
  Reader r(payload, base);
  ModelParams p;
  p.shift_fold = r.get<double>("shift fold");
  const std::uint64_t cat = r.offset();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != 6) throw FormatError(fmt::format("params section holds {} tensors, expected 6", count), cat);
  std::vector<Tensor> ts;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("extent");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.get<double>("tensor data");
    ts.push_back(Tensor::from(std::move(shape), std::move(data), true));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in params section", r.offset());
  p.conv1_w = ts[0];
  p.conv1_b = ts[1];
  p.conv2_w = ts[2];
  p.conv2_b = ts[3];
  p.head_w = ts[4];
  p.head_b = ts[5];
  return p;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

// Payload offset of each section inside the file, for error reporting.
std::vector<std::uint64_t> payload_offsets(const std::vector<Section>& sections) {
  std::vector<std::uint64_t> offs;
  std::uint64_t at = 8;
  for (const auto& s : sections) {
    offs.push_back(at + 9);
    at += 9 + s.payload.size();
  }
  return offs;
}

}  // namespace

void store(const MemoryBank& bank, const std::filesystem::path& path) {
  std::vector<Section> sections;
  for (const auto& e : bank.entries()) sections.push_back({SectionKind::exemplars, encode_exemplar(*e)});
  write_file(path, encode_container(sections));
}

MemoryBank load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto sections = decode_container(bytes);
  const auto offs = payload_offsets(sections);
  std::vector<CondensedExemplar> exemplars;
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (sections[i].kind != SectionKind::exemplars) continue;
    exemplars.push_back(decode_exemplar(sections[i].payload, offs[i]));
    ++counts[exemplars.back().label];
  }
  std::size_t cap = 0;
  for (const auto& [label, n] : counts) cap = std::max(cap, n);
  MemoryBank bank(cap);
  for (auto& ex : exemplars) bank.insert(std::move(ex));
  return bank;
}

void store_params(const ModelParams& params, const std::filesystem::path& path) {
  const Section s{SectionKind::params, encode_params(params)};
  write_file(path, encode_container(std::span(&s, 1)));
}

ModelParams load_params(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto sections = decode_container(bytes);
  const auto offs = payload_offsets(sections);
  for (std::size_t i = 0; i < sections.size(); ++i)
    if (sections[i].kind == SectionKind::params) return decode_params(sections[i].payload, offs[i]);
  throw FormatError("no params section in " + path.string(), bytes.size());
}

void store_clips(std::span<const VideoClip> clips, const std::filesystem::path& path) {
  std::vector<Section> sections;
  for (const auto& c : clips) {
    CondensedExemplar ex;
    ex.label = c.label;
    ex.frames = c.frames;
    ex.channels = c.channels;
    ex.height = c.height;
    ex.width = c.width;
    ex.quantized = true;
    ex.bytes = c.pixels;
    ex.weights_audit.assign(c.frames, static_cast<float>(1.0 / static_cast<double>(c.frames)));
    sections.push_back({SectionKind::exemplars, encode_exemplar(ex)});
  }
  write_file(path, encode_container(sections));
}

std::vector<VideoClip> load_clips(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto sections = decode_container(bytes);
  const auto offs = payload_offsets(sections);
  std::vector<VideoClip> clips;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (sections[i].kind != SectionKind::exemplars) continue;
    CondensedExemplar ex = decode_exemplar(sections[i].payload, offs[i]);
    if (!ex.quantized) throw FormatError("clip section holds float pixels", offs[i]);
    VideoClip c;
    c.frames = ex.frames;
    c.channels = ex.channels;
    c.height = ex.height;
    c.width = ex.width;
    c.label = ex.label;
    c.instance = i;
    c.pixels = std::move(ex.bytes);
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace condensa::fmex
