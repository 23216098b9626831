#include <cmath>
#include <fstream>
#include <sstream>

#include "pedcc/errors.hpp"
#include "pedcc/model.hpp"

namespace pedcc {

namespace {

void write_block(std::ostream& os, const NamedTensor& t) {
  os << t.name << ' ' << t.value.rank();
  for (std::size_t e : t.value.shape()) os << ' ' << e;
  for (double v : t.value.data()) os << ' ' << format_stored_real(v);
  os << '\n';
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(is_, line)) throw FormatError(std::string("unexpected end of file, expected ") + what, line_ + 1);
    ++line_;
    return line;
  }

  // "key rest-of-line"
  std::string keyed(const std::string& key) {
    const std::string line = next(key.c_str());
    if (line.rfind(key + ' ', 0) != 0) throw FormatError("expected '" + key + " ...'", line_);
    return line.substr(key.size() + 1);
  }

  std::size_t line() const noexcept { return line_; }
  std::istream& stream() { return is_; }
  void skip(std::size_t n) { line_ += n; }

 private:
  std::istream& is_;
  std::size_t line_ = 0;
};

std::size_t parse_count(const std::string& text, std::size_t line) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw FormatError("expected a non-negative integer, got '" + text + "'", line);
  }
  if (pos != text.size() || text[0] == '-') throw FormatError("expected a non-negative integer, got '" + text + "'", line);
  return static_cast<std::size_t>(v);
}

void read_blocks(LineReader& in, Model& model, const std::string& section) {
  const std::size_t count = parse_count(in.keyed(section), in.line());
  for (std::size_t b = 0; b < count; ++b) {
    std::istringstream ls(in.next("tensor block"));
    std::string name;
    std::size_t rank = 0;
    if (!(ls >> name >> rank) || rank == 0) throw FormatError("malformed tensor block header", in.line());
    Shape shape(rank);
    for (auto& e : shape)
      if (!(ls >> e)) throw FormatError("truncated shape for '" + name + "'", in.line());
    Tensor* target = nullptr;
    try {
      target = &model.state_tensor(name);
    } catch (const ArgumentError& e) {
      throw FormatError(e.what(), in.line());
    }
    if (target->shape() != shape)
      throw FormatError("'" + name + "' has shape " + shape_str(shape) + ", model expects " + shape_str(target->shape()),
                        in.line());
    auto dst = target->mutable_data();
    std::string tok;
    std::size_t i = 0;
    while (ls >> tok) {
      if (i >= dst.size()) throw FormatError("too many values for '" + name + "'", in.line());
      char* end = nullptr;
      dst[i++] = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0' || !std::isfinite(dst[i - 1]))
        throw FormatError("invalid real '" + tok + "' in '" + name + "'", in.line());
    }
    if (i != dst.size())
      throw FormatError("'" + name + "' has " + std::to_string(i) + " values, expected " + std::to_string(dst.size()),
                        in.line());
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  const ModelConfig& cfg = model.config();
  os << "PEDCC-MODEL 1\n";
  os << "input_shape";
  for (std::size_t e : cfg.input_shape) os << ' ' << e;
  os << "\narchitecture " << cfg.architecture.to_string() << '\n';
  os << "feature_dim " << cfg.feature_dim << '\n';
  os << "num_classes " << cfg.num_classes << '\n';
  os << "activation " << cfg.activation << '\n';
  os << "seed " << cfg.seed << '\n';
  write_centroids(os, model.centroids());
  os << "parameters " << model.parameters().size() << '\n';
  for (const auto& p : model.parameters()) write_block(os, p);
  const auto bufs = model.buffers();
  os << "buffers " << bufs.size() << '\n';
  for (const auto& b : bufs) write_block(os, b);
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  LineReader in(is);
  if (in.next("header") != "PEDCC-MODEL 1") throw FormatError("not a PEDCC-MODEL 1 checkpoint", 1);

  ModelConfig cfg;
  try {
    cfg.input_shape.clear();
    std::istringstream shape(in.keyed("input_shape"));
    std::string tok;
    while (shape >> tok) cfg.input_shape.push_back(parse_count(tok, in.line()));
    cfg.architecture = Architecture::parse(in.keyed("architecture"));
    cfg.feature_dim = parse_count(in.keyed("feature_dim"), in.line());
    cfg.num_classes = parse_count(in.keyed("num_classes"), in.line());
    cfg.activation = in.keyed("activation");
    cfg.seed = parse_count(in.keyed("seed"), in.line());
    cfg.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(e.what(), in.line());
  }

  CentroidSet centroids = read_centroids(in.stream(), in.line() + 1);
  in.skip(centroids.num_classes() + 1);
  Model model = [&] {
    try {
      return Model(cfg, centroids);
    } catch (const ArgumentError& e) {
      throw FormatError(e.what(), in.line());
    }
  }();
  read_blocks(in, model, "parameters");
  read_blocks(in, model, "buffers");
  return model;
}

}  // namespace pedcc
