#include "swwae/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace swwae {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[] = "SWWAE1";

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof value);
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T value;
    read(reinterpret_cast<char*>(&value), sizeof value);
    return value;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated file");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint " + path_ + ": " + what);
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace

std::string config_text(const SwwaeModel& model) {
  const SwwaeConfig& c = model.config();
  std::ostringstream os;
  os << "input_channels=" << model.input_shape().channels << '\n'
     << "input_height=" << model.input_shape().height << '\n'
     << "input_width=" << model.input_shape().width << '\n'
     << "seed=" << model.seed() << '\n'
     << "lambda_nll=" << number(c.lambda_nll) << '\n'
     << "lambda_rec=" << number(c.lambda_rec) << '\n'
     << "lambda_mid=" << number(c.lambda_mid) << '\n'
     << "modality=" << to_string(c.modality) << '\n'
     << "pool_mode=" << (c.pool_mode == PoolMode::hard ? "hard" : "soft") << '\n'
     << "beta=" << number(c.beta) << '\n'
     << "unpool_mode=" << (c.unpool_mode == UnpoolMode::where ? "where" : "upsample") << '\n'
     << "dropout_fc=" << number(c.dropout_fc) << '\n'
     << "dropout_conv=" << number(c.dropout_conv) << '\n'
     << "l1_weight=" << number(c.l1_weight) << '\n'
     << "batchnorm=" << c.batchnorm << '\n'
     << "batchnorm_decoder=" << c.batchnorm_decoder << '\n'
     << "build_decoder=" << c.build_decoder << '\n';
  return os.str();
}

void save_checkpoint(SwwaeModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kMagic, 6);
  put_string(os, format_architecture(model.arch()));
  put_string(os, config_text(model));
  const auto params = model.parameters();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    const Tensor& t = *p.value;
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

SwwaeModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  Reader r(is, path);
  char magic[6];
  r.read(magic, 6);
  if (std::memcmp(magic, kMagic, 6) != 0) r.fail("bad magic");
  const std::string arch_text = r.get_string();

  std::map<std::string, std::string> kv;
  std::istringstream lines(r.get_string());
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) r.fail("missing config key " + key);
    return it->second;
  };
  auto as_size = [&](const std::string& key) { return std::stoull(field(key)); };
  auto as_double = [&](const std::string& key) { return std::stod(field(key)); };
  auto as_bool = [&](const std::string& key) { return field(key) == "1"; };

  InputShape input{as_size("input_channels"), as_size("input_height"), as_size("input_width")};
  SwwaeConfig c;
  c.lambda_nll = as_double("lambda_nll");
  c.lambda_rec = as_double("lambda_rec");
  c.lambda_mid = as_double("lambda_mid");
  c.modality = parse_modality(field("modality"));
  c.pool_mode = field("pool_mode") == "soft" ? PoolMode::soft : PoolMode::hard;
  c.beta = as_double("beta");
  c.unpool_mode = field("unpool_mode") == "upsample" ? UnpoolMode::upsample : UnpoolMode::where;
  c.dropout_fc = as_double("dropout_fc");
  c.dropout_conv = as_double("dropout_conv");
  c.l1_weight = as_double("l1_weight");
  c.batchnorm = as_bool("batchnorm");
  c.batchnorm_decoder = as_bool("batchnorm_decoder");
  c.build_decoder = as_bool("build_decoder");

  SwwaeModel model(parse_architecture(arch_text, input.channels), input, c, as_size("seed"));
  auto params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    r.fail("holds " + std::to_string(count) + " tensors, model expects " +
           std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != p.value->shape()) {
      r.fail("tensor " + p.name + " has shape " + to_string(shape) + ", expected " +
             to_string(p.value->shape()));
    }
    r.read(reinterpret_cast<char*>(p.value->data()), p.value->size() * sizeof(double));
  }
  return model;
}

}  // namespace swwae
