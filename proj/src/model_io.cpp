#include "xdistill/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "xdistill/error.hpp"

namespace xdistill {

namespace {

constexpr char kMagic[4] = {'X', 'D', 'N', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string header_text(const Network& net) {
  std::ostringstream os;
  os << "xdistill-model\n";
  os << "role " << to_string(net.role()) << '\n';
  os << "input " << net.input().c << ' ' << net.input().h << ' ' << net.input().w << '\n';
  os << "layers " << net.num_layers() << '\n';
  std::size_t total = 0;
  for (const auto& layer : net.layers()) {
    const LayerSpec& s = layer.spec;
    os << to_string(s.kind) << " in=" << s.in << " out=" << s.out;
    if (s.kind == LayerKind::Conv) os << " k=" << s.k << " stride=" << s.stride << " pad=" << s.pad;
    os << " act=" << to_string(s.act) << " weights=" << layer.weight.size() << " bias=" << layer.bias.size()
       << '\n';
    total += layer.weight.size() + layer.bias.size();
  }
  os << "payload " << total << '\n';
  return os.str();
}

[[noreturn]] void bad_header(const std::string& msg) {
  throw FormatError(FormatErrc::BadHeader, "model header: " + msg);
}

std::size_t parse_count(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    bad_header("expected a non-negative integer, got '" + text + "'");
  }
  return static_cast<std::size_t>(std::stoull(text));
}

struct HeaderLayer {
  LayerSpec spec;
  std::size_t weights = 0, bias = 0;
};

struct Header {
  Role role = Role::Teacher;
  InputShape input;
  std::vector<HeaderLayer> layers;
  std::size_t payload = 0;
};

Header parse_header(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  Header h;
  if (!std::getline(is, line) || line != "xdistill-model") bad_header("missing format tag");
  std::size_t declared_layers = 0;
  bool have_payload = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "role") {
      std::string r;
      ls >> r;
      if (r == "teacher") h.role = Role::Teacher;
      else if (r == "student") h.role = Role::Student;
      else bad_header("unknown role '" + r + "'");
    } else if (key == "input") {
      std::string c, hh, w;
      ls >> c >> hh >> w;
      h.input = {parse_count(c), parse_count(hh), parse_count(w)};
    } else if (key == "layers") {
      std::string n;
      ls >> n;
      declared_layers = parse_count(n);
    } else if (key == "conv" || key == "linear") {
      std::map<std::string, std::string> kv;
      std::string tok;
      while (ls >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) bad_header("malformed field '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
      }
      auto field = [&](const char* name) -> std::string {
        auto it = kv.find(name);
        if (it == kv.end()) bad_header(std::string("layer record lacks '") + name + "'");
        return it->second;
      };
      HeaderLayer hl;
      if (key == "conv") {
        hl.spec = LayerSpec::conv(parse_count(field("in")), parse_count(field("out")), parse_count(field("k")),
                                  parse_count(field("stride")), parse_count(field("pad")));
      } else {
        hl.spec = LayerSpec::linear(parse_count(field("in")), parse_count(field("out")));
      }
      const std::string act = field("act");
      if (act == "relu") hl.spec.act = Activation::ReLU;
      else if (act == "none") hl.spec.act = Activation::None;
      else bad_header("unknown activation '" + act + "'");
      hl.weights = parse_count(field("weights"));
      hl.bias = parse_count(field("bias"));
      h.layers.push_back(hl);
    } else if (key == "payload") {
      std::string n;
      ls >> n;
      h.payload = parse_count(n);
      have_payload = true;
    } else {
      bad_header("unknown record '" + key + "'");
    }
  }
  if (!have_payload) bad_header("missing payload record");
  if (declared_layers != h.layers.size()) {
    throw FormatError(FormatErrc::LengthMismatch, "model header declares " + std::to_string(declared_layers) +
                                                      " layers but lists " + std::to_string(h.layers.size()));
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Network& net) {
  const std::string header = header_text(net);
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kModelFormatVersion);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  const std::size_t payload_start = out.size();
  for (const auto& layer : net.layers()) {
    for (double v : layer.weight.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    for (double v : layer.bias) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::uint64_t checksum = 0;
  for (std::size_t i = payload_start; i < out.size(); ++i) checksum += out[i];
  put_u64(out, checksum);
  return out;
}

Network parse_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(FormatErrc::BadMagic, "bad magic: not an xdistill model file");
  }
  if (bytes.size() < 16) throw FormatError(FormatErrc::Truncated, "model file truncated inside the preamble");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kModelFormatVersion) {
    throw FormatError(FormatErrc::VersionMismatch, "model format version " + std::to_string(version) +
                                                       " is not supported (expected " +
                                                       std::to_string(kModelFormatVersion) + ")");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) {
    throw FormatError(FormatErrc::Truncated, "model file truncated inside the header");
  }
  const std::string text(reinterpret_cast<const char*>(bytes.data() + 16), header_len);
  const Header h = parse_header(text);

  std::size_t declared = 0;
  for (const auto& hl : h.layers) {
    if (hl.weights != hl.spec.weight_shape().size()) {
      throw FormatError(FormatErrc::LengthMismatch, "layer weight count disagrees with its shape");
    }
    declared += hl.weights + hl.bias;
  }
  if (declared != h.payload) {
    throw FormatError(FormatErrc::LengthMismatch, "header layer records sum to " + std::to_string(declared) +
                                                      " values but the payload record declares " +
                                                      std::to_string(h.payload));
  }
  const std::size_t payload_start = 16 + header_len;
  const std::size_t remaining = bytes.size() - payload_start;
  if (h.payload > (remaining / 8) || h.payload * 8 + 8 > remaining) {
    throw FormatError(FormatErrc::Truncated, "payload truncated: header declares " + std::to_string(h.payload * 8) +
                                                 " payload bytes plus checksum, file holds " +
                                                 std::to_string(remaining));
  }
  if (h.payload * 8 + 8 != remaining) {
    throw FormatError(FormatErrc::LengthMismatch, "file holds " + std::to_string(remaining - h.payload * 8 - 8) +
                                                      " bytes beyond the declared payload");
  }
  std::uint64_t checksum = 0;
  for (std::size_t i = 0; i < h.payload * 8; ++i) checksum += bytes[payload_start + i];
  if (checksum != get_u64(bytes.data() + payload_start + h.payload * 8)) {
    throw FormatError(FormatErrc::Checksum, "payload checksum mismatch");
  }

  const std::uint8_t* p = bytes.data() + payload_start;
  auto next = [&p]() {
    const double v = std::bit_cast<double>(get_u64(p));
    p += 8;
    return v;
  };
  std::vector<Layer> layers;
  for (const auto& hl : h.layers) {
    Tensor w(hl.spec.weight_shape());
    for (double& v : w.data()) v = next();
    std::vector<double> bias(hl.bias);
    for (double& v : bias) v = next();
    layers.push_back(Layer{hl.spec, std::move(w), std::move(bias)});
  }
  try {
    return Network(h.input, std::move(layers), h.role);
  } catch (const ShapeError& e) {
    throw FormatError(FormatErrc::BadHeader, std::string("model header describes an invalid network: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrc::Io, "write failed for " + path.string());
}

void save_model(const Network& net, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_model(net));
}

Network load_model(const std::filesystem::path& path) { return parse_model(read_file_bytes(path)); }

}  // namespace xdistill
