#include "atsdf/io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"

namespace atsdf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Error io_error(const fs::path& path, const std::string& what) {
  return Error(ErrorCode::kIo, path.string() + ": " + what);
}

Error format_error(const fs::path& path, const std::string& what) {
  return Error(ErrorCode::kFormat, path.string() + ": " + what);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw format_error(path, "truncated binary data");
  return value;
}

}  // namespace

Image8 read_png(const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw io_error(path, "cannot open");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw format_error(path, "not a PNG");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::kIo, "libpng init failed");
  }
  Image8 image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw format_error(path, "corrupt PNG");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS) && color != PNG_COLOR_TYPE_GRAY) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  image = Image8(width, height, channels);
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = image.data().data() + static_cast<std::size_t>(y) * width * channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const fs::path& path, const Image8& image) {
  const int color = [&] {
    switch (image.channels()) {
      case 1: return PNG_COLOR_TYPE_GRAY;
      case 3: return PNG_COLOR_TYPE_RGB;
      case 4: return PNG_COLOR_TYPE_RGBA;
      default: throw Error(ErrorCode::kInvalidArgument, "write_png: unsupported channel count");
    }
  }();
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw io_error(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::kIo, "libpng init failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error(path, "PNG write failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image.width()) * image.channels();
  for (int y = 0; y < image.height(); ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(image.data().data() + y * stride);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open");
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw format_error(path, "truncated header");
  };
  const std::string magic = token();
  int channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw format_error(path, "unsupported PNM magic " + magic);
  }
  const int width = std::stoi(token());
  const int height = std::stoi(token());
  const int maxval = std::stoi(token());
  if (maxval != 255) throw format_error(path, "only maxval 255 is supported");
  in.get();
  Image8 image(width, height, channels);
  if (!in.read(reinterpret_cast<char*>(image.data().data()), static_cast<std::streamsize>(image.data().size()))) {
    throw format_error(path, "truncated pixel data");
  }
  return image;
}

void write_pnm(const fs::path& path, const Image8& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw Error(ErrorCode::kInvalidArgument, "write_pnm: need 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path, "cannot open for writing");
  out << (image.channels() == 3 ? "P6" : "P5") << '\n' << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data().data()), static_cast<std::streamsize>(image.data().size()));
  if (!out) throw io_error(path, "write failed");
}

Image8 read_image(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  throw format_error(path, "unknown image extension");
}

void write_image(const fs::path& path, const Image8& image) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return write_png(path, image);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return write_pnm(path, image);
  throw format_error(path, "unknown image extension");
}

void write_ply(const fs::path& path, const TriangleMesh& mesh, PlyFormat format, const PlyFaceAttributes& attributes) {
  mesh.validate();
  const bool has_class = !attributes.class_id.empty();
  const bool has_color = !attributes.color.empty();
  if ((has_class && attributes.class_id.size() != mesh.faces.size()) ||
      (has_color && attributes.color.size() != mesh.faces.size())) {
    throw Error(ErrorCode::kInvalidArgument, "write_ply: face attribute size mismatch");
  }
  std::string out;
  out += "ply\nformat ";
  out += format == PlyFormat::kAscii ? "ascii" : "binary_little_endian";
  out += " 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "element face " + std::to_string(mesh.faces.size()) + "\n";
  out += "property list uchar int vertex_indices\n";
  if (has_class) out += "property int class_id\n";
  if (has_color) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  char buf[160];
  if (format == PlyFormat::kAscii) {
    for (const Vec3& v : mesh.vertices) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
      out += buf;
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const Face& t = mesh.faces[f];
      std::snprintf(buf, sizeof(buf), "3 %d %d %d", t[0], t[1], t[2]);
      out += buf;
      if (has_class) out += " " + std::to_string(attributes.class_id[f]);
      if (has_color) {
        const auto& c = attributes.color[f];
        std::snprintf(buf, sizeof(buf), " %d %d %d", c[0], c[1], c[2]);
        out += buf;
      }
      out += '\n';
    }
  } else {
    out.reserve(out.size() + mesh.vertices.size() * 24 + mesh.faces.size() * 20);
    for (const Vec3& v : mesh.vertices) {
      put(out, v.x());
      put(out, v.y());
      put(out, v.z());
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      put<std::uint8_t>(out, 3);
      for (std::int32_t i : mesh.faces[f]) put(out, i);
      if (has_class) put(out, attributes.class_id[f]);
      if (has_color) {
        for (std::uint8_t c : attributes.color[f]) put(out, c);
      }
    }
  }
  write_file_atomic(path, out);
}

namespace {

enum class PlyType { kChar, kUChar, kShort, kUShort, kInt, kUInt, kFloat, kDouble };

PlyType parse_ply_type(const std::string& t, const fs::path& path) {
  if (t == "char" || t == "int8") return PlyType::kChar;
  if (t == "uchar" || t == "uint8") return PlyType::kUChar;
  if (t == "short" || t == "int16") return PlyType::kShort;
  if (t == "ushort" || t == "uint16") return PlyType::kUShort;
  if (t == "int" || t == "int32") return PlyType::kInt;
  if (t == "uint" || t == "uint32") return PlyType::kUInt;
  if (t == "float" || t == "float32") return PlyType::kFloat;
  if (t == "double" || t == "float64") return PlyType::kDouble;
  throw format_error(path, "unknown PLY type " + t);
}

double read_binary_value(std::istream& in, PlyType t, const fs::path& path) {
  switch (t) {
    case PlyType::kChar: return get<std::int8_t>(in, path);
    case PlyType::kUChar: return get<std::uint8_t>(in, path);
    case PlyType::kShort: return get<std::int16_t>(in, path);
    case PlyType::kUShort: return get<std::uint16_t>(in, path);
    case PlyType::kInt: return get<std::int32_t>(in, path);
    case PlyType::kUInt: return get<std::uint32_t>(in, path);
    case PlyType::kFloat: return get<float>(in, path);
    case PlyType::kDouble: return get<double>(in, path);
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kDouble;
  bool list = false;
  PlyType count_type = PlyType::kUChar;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyData {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
};

PlyData read_ply_data(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open");
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw format_error(path, "missing ply magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt != "ascii") {
        throw format_error(path, "unsupported PLY format " + fmt);
      }
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw format_error(path, "property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, vt;
        ls >> ct >> vt >> p.name;
        p.list = true;
        p.count_type = parse_ply_type(ct, path);
        p.type = parse_ply_type(vt, path);
      } else {
        p.type = parse_ply_type(t, path);
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }

  PlyData data;
  for (const PlyElement& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero();
      for (const PlyProperty& p : e.properties) {
        if (p.list) {
          const auto n = static_cast<std::size_t>(binary ? read_binary_value(in, p.count_type, path) : [&] {
            double x;
            if (!(in >> x)) throw format_error(path, "truncated ascii data");
            return x;
          }());
          std::vector<std::int32_t> idx(n);
          for (auto& k : idx) {
            double x = 0;
            if (binary) {
              x = read_binary_value(in, p.type, path);
            } else if (!(in >> x)) {
              throw format_error(path, "truncated ascii data");
            }
            k = static_cast<std::int32_t>(x);
          }
          if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (n != 3) throw format_error(path, "only triangle faces are supported");
            data.faces.push_back({idx[0], idx[1], idx[2]});
          }
          continue;
        }
        double x = 0;
        if (binary) {
          x = read_binary_value(in, p.type, path);
        } else if (!(in >> x)) {
          throw format_error(path, "truncated ascii data");
        }
        if (is_vertex) {
          if (p.name == "x") v.x() = x;
          if (p.name == "y") v.y() = x;
          if (p.name == "z") v.z() = x;
        }
      }
      if (is_vertex) data.vertices.push_back(v);
    }
  }
  return data;
}

}  // namespace

TriangleMesh read_ply(const fs::path& path) {
  PlyData data = read_ply_data(path);
  TriangleMesh mesh;
  mesh.vertices = std::move(data.vertices);
  mesh.faces = std::move(data.faces);
  mesh.validate();
  mesh.compute_normals();
  return mesh;
}

void write_point_cloud(const fs::path& path, const std::vector<Vec3>& points) {
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(points.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out.reserve(out.size() + points.size() * 24);
  for (const Vec3& p : points) {
    put(out, p.x());
    put(out, p.y());
    put(out, p.z());
  }
  write_file_atomic(path, out);
}

std::vector<Vec3> read_point_cloud(const fs::path& path) { return read_ply_data(path).vertices; }

std::vector<TrajectoryEntry> read_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path, "cannot open");
  std::vector<TrajectoryEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    double v[8];
    int n = 0;
    while (n < 8 && ls >> v[n]) ++n;
    if (n == 0) continue;
    if (n != 8) throw format_error(path, "line " + std::to_string(lineno) + ": expected 8 numbers");
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw format_error(path, "line " + std::to_string(lineno) + ": quaternion is not unit length");
    }
    out.push_back({v[0], RigidPose::from_quaternion(q.normalized(), Vec3(v[1], v[2], v[3]))});
  }
  return out;
}

void write_trajectory(const fs::path& path, const std::vector<TrajectoryEntry>& entries) {
  std::string out;
  char buf[256];
  for (const auto& e : entries) {
    const Vec3& t = e.pose.translation();
    const Eigen::Quaterniond q = e.pose.quaternion();
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", e.timestamp, t.x(), t.y(),
                  t.z(), q.x(), q.y(), q.z(), q.w());
    out += buf;
  }
  write_file_atomic(path, out);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error(partial, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error(partial, "write failed");
  }
  std::error_code ec;
  fs::rename(partial, path, ec);
  if (ec) throw io_error(path, "rename failed: " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw format_error(path, e.what());
  }
  std::vector<ManifestEntry> out;
  try {
    for (const auto& f : doc.at("frames")) {
      ManifestEntry e;
      e.id = f.at("id").get<int>();
      e.image = f.at("image").get<std::string>();
      e.width = f.value("width", 0);
      e.height = f.value("height", 0);
      const auto& k = f.at("intrinsics");
      e.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                      k.at("cy").get<double>()};
      const auto t = f.at("pose").at("t").get<std::array<double, 3>>();
      const auto q = f.at("pose").at("q").get<std::array<double, 4>>();
      Eigen::Quaterniond quat(q[3], q[0], q[1], q[2]);
      if (std::abs(quat.norm() - 1.0) > 1e-6) throw format_error(path, "frame quaternion is not unit length");
      e.pose = RigidPose::from_quaternion(quat.normalized(), Vec3(t[0], t[1], t[2]));
      out.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw format_error(path, e.what());
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  json frames = json::array();
  for (const auto& e : entries) {
    const Vec3& t = e.pose.translation();
    const Eigen::Quaterniond q = e.pose.quaternion();
    frames.push_back({{"id", e.id},
                      {"image", e.image},
                      {"width", e.width},
                      {"height", e.height},
                      {"intrinsics", {{"fx", e.intrinsics.fx}, {"fy", e.intrinsics.fy}, {"cx", e.intrinsics.cx},
                                      {"cy", e.intrinsics.cy}}},
                      {"pose", {{"t", {t.x(), t.y(), t.z()}}, {"q", {q.x(), q.y(), q.z(), q.w()}}}}});
  }
  write_file_atomic(path, json{{"frames", frames}}.dump(2) + "\n");
}

std::vector<CameraFrame> load_frames(const fs::path& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::vector<CameraFrame> frames;
  frames.reserve(entries.size());
  for (const auto& e : entries) {
    CameraFrame f;
    f.frame_id = e.id;
    f.intrinsics = e.intrinsics;
    f.pose = e.pose;
    f.image = read_image(base / e.image);
    if ((e.width && e.width != f.width()) || (e.height && e.height != f.height())) {
      throw format_error(manifest_path, "image size of frame " + std::to_string(e.id) + " disagrees with manifest");
    }
    validate_camera(f);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace atsdf
