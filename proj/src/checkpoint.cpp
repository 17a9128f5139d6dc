#include "freqclick/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace freqclick {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "freqclick-checkpoint 1";

std::string join_dims(const std::vector<std::size_t>& d) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(d[i]);
  }
  return s;
}

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw FormatError("bad shape '" + s + "'");
    }
  }
  if (out.empty()) throw FormatError("empty shape");
  return out;
}

std::map<std::string, std::string> parse_fields(std::istringstream& line) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (line >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("expected key=value, got '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("missing field '" + key + "'");
  return it->second;
}

std::size_t to_size(const std::string& s) {
  try {
    std::size_t pos = 0;
    auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw FormatError("bad integer '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw FormatError("bad integer '" + s + "'");
  } catch (const std::out_of_range&) {
    throw FormatError("integer out of range '" + s + "'");
  }
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
Checkpoint make_checkpoint(const ParamSet<T>& params, std::map<std::string, std::string> meta) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto* p : params.all()) {
    CheckpointEntry e;
    e.name = p->name;
    e.shape = p->value.shape().dims();
    if (p->complex) {
      e.shape.pop_back();
      e.dtype = std::is_same_v<T, float> ? DType::kComplex64 : DType::kComplex128;
    } else {
      e.dtype = dtype_of<T>();
    }
    e.offset = ck.blob.size();
    e.length = p->value.numel() * sizeof(T);
    ck.blob.resize(e.offset + e.length);
    std::memcpy(ck.blob.data() + e.offset, p->value.data().data(), e.length);
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::ostringstream os;
  os << kMagic << '\n';
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of(" =\n") != std::string::npos || v.find_first_of(" \n") != std::string::npos) {
      throw ContractError("checkpoint meta must not contain spaces or newlines: " + k);
    }
    os << "meta " << k << '=' << v << '\n';
  }
  for (const auto& e : ck.entries) {
    os << "param name=" << e.name << " dtype=" << dtype_name(e.dtype) << " shape=" << join_dims(e.shape)
       << " offset=" << e.offset << " length=" << e.length << '\n';
  }
  os << "blob length=" << ck.blob.size() << '\n';
  os << "end\n";
  std::string out = os.str();
  out.append(reinterpret_cast<const char*>(ck.blob.data()), ck.blob.size());
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Checkpoint ck;
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("truncated checkpoint header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) throw FormatError("not a freqclick checkpoint");
  std::size_t blob_len = 0;
  bool have_blob = false;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "meta") {
      std::string rest;
      is >> rest;
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw FormatError("bad meta line");
      ck.meta[rest.substr(0, eq)] = rest.substr(eq + 1);
    } else if (kind == "param") {
      const auto kv = parse_fields(is);
      CheckpointEntry e;
      e.name = field(kv, "name");
      e.dtype = parse_dtype(field(kv, "dtype"));
      e.shape = parse_dims(field(kv, "shape"));
      e.offset = to_size(field(kv, "offset"));
      e.length = to_size(field(kv, "length"));
      std::size_t n = 1;
      for (auto d : e.shape) n *= d;
      if (e.length != n * dtype_size(e.dtype)) {
        throw FormatError("byte length of '" + e.name + "' does not match dtype and shape");
      }
      ck.entries.push_back(std::move(e));
    } else if (kind == "blob") {
      blob_len = to_size(field(parse_fields(is), "length"));
      have_blob = true;
    } else {
      throw FormatError("unknown header line '" + line + "'");
    }
  }
  if (!have_blob) throw FormatError("missing blob length");
  if (bytes.size() - pos != blob_len) {
    throw FormatError("blob is " + std::to_string(bytes.size() - pos) + " bytes, header says " +
                      std::to_string(blob_len));
  }
  std::size_t expect = 0;
  for (const auto& e : ck.entries) {
    if (e.offset != expect) throw FormatError("entry '" + e.name + "' is not contiguous in the blob");
    expect += e.length;
  }
  if (expect != blob_len) throw FormatError("entries do not cover the blob exactly");
  ck.blob.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

template <typename T>
void load_parameters(const Checkpoint& ck, ParamSet<T>& params) {
  for (auto* p : params.all()) {
    const auto* e = ck.find(p->name);
    if (e == nullptr) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
    auto dims = e->shape;
    const bool cplx = e->dtype == DType::kComplex64 || e->dtype == DType::kComplex128;
    if (cplx) dims.push_back(2);
    if (dims != p->value.shape().dims() || cplx != p->complex) {
      throw FormatError("shape mismatch for '" + p->name + "'");
    }
    const std::uint8_t* src = ck.blob.data() + e->offset;
    const std::size_t n = p->value.numel();
    const bool single = e->dtype == DType::kReal32 || e->dtype == DType::kComplex64;
    for (std::size_t i = 0; i < n; ++i) {
      if (single) {
        float v;
        std::memcpy(&v, src + i * sizeof(float), sizeof(float));
        p->value[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, src + i * sizeof(double), sizeof(double));
        p->value[i] = static_cast<T>(v);
      }
    }
  }
}

template Checkpoint make_checkpoint(const ParamSet<float>&, std::map<std::string, std::string>);
template Checkpoint make_checkpoint(const ParamSet<double>&, std::map<std::string, std::string>);
template void load_parameters(const Checkpoint&, ParamSet<float>&);
template void load_parameters(const Checkpoint&, ParamSet<double>&);

}  // namespace freqclick
