// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/data.hpp"

#include "crossmpi/errors.hpp"
#include "crossmpi/imaging.hpp"

#include <Eigen/SVD>
#include <png.h>
#include <torch/torch.h>

#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

namespace crossmpi::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        const std::size_t begin = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        if (i > begin) {
            fields.push_back(line.substr(begin, i - begin));
        }
    }
    return fields;
}

bool parse_double(std::string_view text, double &out) {
    const auto *end = text.data() + text.size();
    const auto result = std::from_chars(text.data(), end, out);
    return result.ec == std::errc() && result.ptr == end && std::isfinite(out);
}

bool parse_int(std::string_view text, int64_t &out) {
    const auto *end = text.data() + text.size();
    const auto result = std::from_chars(text.data(), end, out);
    return result.ec == std::errc() && result.ptr == end;
}

// Line iteration that tolerates \r\n and a missing trailing newline.
template <class Fn> void for_each_line(std::string_view text, Fn &&fn) {
    std::size_t number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        ++number;
        fn(number, line);
        if (nl == std::string_view::npos) {
            break;
        }
        pos = nl + 1;
    }
}

std::string read_text_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(path.string(), 0, "cannot open file");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d &m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d u = svd.matrixU();
        u.col(2) *= -1.0;
        r = u * svd.matrixV().transpose();
    }
    return r;
}

geometry::CameraCalibration pixel_camera(double fx, double fy, double cx, double cy,
                                         int64_t width, int64_t height) {
    geometry::CameraCalibration cam;
    cam.intrinsics << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

// ---- PNG ------------------------------------------------------------------

struct PngReadResult {
    std::vector<unsigned char> pixels;
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 8;
    char error[256] = {0};
};

void png_error_handler(png_structp png, png_const_charp message) {
    auto *result = static_cast<PngReadResult *>(png_get_error_ptr(png));
    if (result != nullptr) {
        std::snprintf(result->error, sizeof(result->error), "%s", message);
    }
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

// Decodes to 8- or 16-bit RGB (16-bit samples big-endian). Returns false on
// failure with result.error set. Kept free of non-trivial locals across setjmp.
bool read_png_rgb(std::FILE *fp, PngReadResult &result) {
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, &result, png_error_handler, png_warning_handler);
    if (png == nullptr) {
        std::snprintf(result.error, sizeof(result.error), "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        std::snprintf(result.error, sizeof(result.error), "out of memory");
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    result.width = png_get_image_width(png, info);
    result.height = png_get_image_height(png, info);
    result.bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    result.pixels.resize(row_bytes * result.height);
    std::vector<png_bytep> rows(result.height);
    for (png_uint_32 y = 0; y < result.height; ++y) {
        rows[y] = result.pixels.data() + y * row_bytes;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool write_png(std::FILE *fp, const unsigned char *pixels, png_uint_32 width, png_uint_32 height,
               int channels, int bit_depth, char *error) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) {
        std::snprintf(error, 256, "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::snprintf(error, 256, "libpng write failure");
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, width, height, bit_depth,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_write_row(png, pixels + y * row_bytes);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

fs::path frame_path(const fs::path &frames_dir, const FrameEntry &frame) {
    return frames_dir / (std::to_string(frame.frame_id) + ".png");
}

CalibratedImage load_calibrated_frame(const fs::path &frames_dir, const FrameEntry &frame) {
    const auto path = frame_path(frames_dir, frame);
    if (!fs::exists(path)) {
        throw DataError("missing frame image " + path.string());
    }
    auto image = load_png(path);
    auto calibration = frame_calibration(frame, image.size(2), image.size(1));
    return {std::move(image), std::move(calibration)};
}

} // namespace

void TrainingTuple::validate(int64_t beta) const {
    const auto fail = [](const std::string &message) { throw DataError("training tuple: " + message); };
    if (beta < 1) {
        fail("beta must be positive");
    }
    if (!lr.defined() || !ref.defined() || !gt.defined() || lr.dim() != 3 || ref.dim() != 3 ||
        gt.dim() != 3) {
        fail("images must be [c, H, W] tensors");
    }
    if (gt.sizes() != ref.sizes()) {
        fail("ground truth and reference resolutions differ");
    }
    if (lr.size(0) != gt.size(0) || gt.size(1) != beta * lr.size(1) ||
        gt.size(2) != beta * lr.size(2)) {
        std::ostringstream msg;
        msg << "resolution ratio is not " << beta << " (LR " << lr.sizes() << ", GT " << gt.sizes()
            << ")";
        fail(msg.str());
    }
    if (c_lr.width != lr.size(2) || c_lr.height != lr.size(1)) {
        fail("LR calibration size does not match the LR image");
    }
    if (c_ref.width != ref.size(2) || c_ref.height != ref.size(1)) {
        fail("reference calibration size does not match the reference image");
    }
    if (frame_difference < 0) {
        fail("frame difference must be non-negative");
    }
    c_lr.validate();
    c_ref.validate();
}

TrainingTuple TrainingTuple::to(torch::ScalarType dtype) const {
    TrainingTuple out = *this;
    out.lr = lr.to(dtype);
    out.ref = ref.to(dtype);
    out.gt = gt.to(dtype);
    return out;
}

// ---- sequences --------------------------------------------------------------

SequenceRecord parse_sequence_text(std::string_view text, const std::string &id,
                                   const std::string &source_name) {
    SequenceRecord record;
    record.id = id;
    bool have_header = false;
    for_each_line(text, [&](std::size_t number, std::string_view line) {
        const auto fields = split_fields(line);
        if (!have_header) {
            if (fields.empty()) {
                throw ParseError(source_name, number, "missing sequence header line");
            }
            record.source = std::string(line);
            have_header = true;
            return;
        }
        if (fields.empty()) {
            return;
        }
        if (fields.size() != 19) {
            throw ParseError(source_name, number,
                             "expected 19 fields, found " + std::to_string(fields.size()));
        }
        FrameEntry frame;
        if (!parse_int(fields[0], frame.frame_id)) {
            throw ParseError(source_name, number,
                             "timestamp '" + std::string(fields[0]) + "' is not an integer");
        }
        double values[18];
        for (int i = 0; i < 18; ++i) {
            if (!parse_double(fields[static_cast<std::size_t>(i + 1)], values[i])) {
                throw ParseError(source_name, number,
                                 "field " + std::to_string(i + 2) + " ('" +
                                     std::string(fields[static_cast<std::size_t>(i + 1)]) +
                                     "') is not a finite number");
            }
        }
        frame.intrinsics = {values[0], values[1], values[2], values[3]};
        if (!(frame.intrinsics.fx > 0.0 && frame.intrinsics.fy > 0.0)) {
            throw ParseError(source_name, number, "focal lengths must be positive");
        }
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) {
                frame.pose(r, c) = values[6 + r * 4 + c];
            }
        }
        if (!record.frames.empty() && frame.frame_id <= record.frames.back().frame_id) {
            throw ParseError(source_name, number, "frame ids must be strictly increasing");
        }
        record.frames.push_back(frame);
    });
    if (!have_header) {
        throw ParseError(source_name, 1, "empty sequence file");
    }
    if (record.frames.size() < 2) {
        throw ParseError(source_name, 0,
                         "a sequence needs at least 2 frames, found " +
                             std::to_string(record.frames.size()));
    }
    return record;
}

SequenceRecord parse_sequence_file(const fs::path &path) {
    return parse_sequence_text(read_text_file(path), path.stem().string(), path.string());
}

geometry::CameraCalibration frame_calibration(const FrameEntry &frame, int64_t width,
                                              int64_t height) {
    const auto &k = frame.intrinsics;
    // Normalized principal points address the continuous image plane where
    // pixel centers sit at i + 0.5; shift to pixel-index coordinates.
    auto cam = pixel_camera(k.fx * static_cast<double>(width), k.fy * static_cast<double>(height),
                            k.cx * static_cast<double>(width) - 0.5,
                            k.cy * static_cast<double>(height) - 0.5, width, height);
    cam.rotation = nearest_rotation(frame.pose.leftCols<3>());
    cam.translation = frame.pose.col(3);
    return cam;
}

// ---- PNG ------------------------------------------------------------------

torch::Tensor load_png(const fs::path &path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE *)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) {
        throw DataError("cannot open image " + path.string());
    }
    PngReadResult result;
    if (!read_png_rgb(fp.get(), result)) {
        throw DataError("cannot decode PNG " + path.string() + ": " + result.error);
    }
    const auto h = static_cast<int64_t>(result.height);
    const auto w = static_cast<int64_t>(result.width);
    torch::Tensor image;
    if (result.bit_depth == 16) {
        auto bytes = torch::from_blob(result.pixels.data(), {h, w, 3, 2}, torch::kUInt8).to(torch::kInt);
        image = (bytes.select(3, 0) * 256 + bytes.select(3, 1)).to(torch::kFloat) / 65535.0f;
    } else {
        image = torch::from_blob(result.pixels.data(), {h, w, 3}, torch::kUInt8).to(torch::kFloat) / 255.0f;
    }
    return image.permute({2, 0, 1}).contiguous();
}

void save_png(const fs::path &path, const torch::Tensor &image, int bit_depth) {
    if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
        throw InvalidArgument("save_png expects a [1 or 3, H, W] image");
    }
    if (bit_depth != 8 && bit_depth != 16) {
        throw InvalidArgument("save_png supports 8 or 16 bits");
    }
    const int channels = static_cast<int>(image.size(0));
    const auto hwc = image.detach().to(torch::kDouble).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    std::vector<unsigned char> bytes;
    if (bit_depth == 8) {
        const auto q = (hwc * 255.0).round().to(torch::kUInt8).contiguous();
        bytes.assign(q.data_ptr<uint8_t>(), q.data_ptr<uint8_t>() + q.numel());
    } else {
        const auto q = (hwc * 65535.0).round().to(torch::kInt).contiguous();
        const auto *v = q.data_ptr<int>();
        bytes.resize(static_cast<std::size_t>(q.numel()) * 2);
        for (int64_t i = 0; i < q.numel(); ++i) {
            bytes[static_cast<std::size_t>(2 * i)] = static_cast<unsigned char>(v[i] >> 8);
            bytes[static_cast<std::size_t>(2 * i + 1)] = static_cast<unsigned char>(v[i] & 0xff);
        }
    }
    std::unique_ptr<std::FILE, int (*)(std::FILE *)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    char error[256] = {0};
    if (!write_png(fp.get(), bytes.data(), static_cast<png_uint_32>(image.size(2)),
                   static_cast<png_uint_32>(image.size(1)), channels, bit_depth, error)) {
        throw DataError("cannot encode PNG " + path.string() + ": " + error);
    }
}

// ---- tuple assembly -------------------------------------------------------------

CalibratedImage center_crop_resize(const CalibratedImage &input, int64_t out_height,
                                   int64_t out_width) {
    const int64_t h = input.image.size(1);
    const int64_t w = input.image.size(2);
    int64_t crop_w = w;
    int64_t crop_h = (w * out_height + out_width / 2) / out_width;
    if (crop_h > h) {
        crop_h = h;
        crop_w = std::min<int64_t>(w, (h * out_width + out_height / 2) / out_height);
    }
    const int64_t x0 = (w - crop_w) / 2;
    const int64_t y0 = (h - crop_h) / 2;

    CalibratedImage out;
    const auto cropped = input.image.slice(1, y0, y0 + crop_h).slice(2, x0, x0 + crop_w);
    auto cam = input.calibration;
    cam.intrinsics(0, 2) -= static_cast<double>(x0);
    cam.intrinsics(1, 2) -= static_cast<double>(y0);
    cam.width = crop_w;
    cam.height = crop_h;
    out.image = imaging::resample_bicubic_to(cropped.contiguous(), out_height, out_width);
    out.calibration = cam.rescaled(out_width, out_height);
    return out;
}

TrainingTuple assemble_tuple(const SequenceRecord &record, const fs::path &frames_dir,
                             std::size_t target_index, std::size_t ref_index, int64_t beta,
                             int64_t out_height, int64_t out_width) {
    if (target_index >= record.frames.size() || ref_index >= record.frames.size()) {
        throw DataError("frame index out of range for sequence " + record.id);
    }
    if (beta < 1 || out_height % beta != 0 || out_width % beta != 0) {
        throw DataError("output size must be divisible by beta");
    }
    const auto target = center_crop_resize(
        load_calibrated_frame(frames_dir, record.frames[target_index]), out_height, out_width);
    const auto reference = center_crop_resize(
        load_calibrated_frame(frames_dir, record.frames[ref_index]), out_height, out_width);

    TrainingTuple tuple;
    tuple.gt = target.image;
    tuple.lr = imaging::resample_bicubic(tuple.gt, {1, beta});
    tuple.ref = reference.image;
    tuple.c_lr = target.calibration.rescaled(out_width / beta, out_height / beta);
    tuple.c_ref = reference.calibration;
    tuple.frame_difference = static_cast<int64_t>(target_index > ref_index ? target_index - ref_index
                                                                           : ref_index - target_index);
    tuple.validate(beta);
    return tuple;
}

// ---- calibration files --------------------------------------------------------

namespace {

geometry::CameraCalibration parse_camera_fields(const std::vector<std::string_view> &fields,
                                                std::size_t first, const std::string &source,
                                                std::size_t line) {
    // width height fx fy cx cy r11..r33 t1 t2 t3
    int64_t width = 0;
    int64_t height = 0;
    if (!parse_int(fields[first], width) || !parse_int(fields[first + 1], height) || width < 1 ||
        height < 1) {
        throw ParseError(source, line, "camera size must be two positive integers");
    }
    double v[16];
    for (int i = 0; i < 16; ++i) {
        if (!parse_double(fields[first + 2 + static_cast<std::size_t>(i)], v[i])) {
            throw ParseError(source, line, "camera field " + std::to_string(i + 3) +
                                               " is not a finite number");
        }
    }
    auto cam = pixel_camera(v[0], v[1], v[2], v[3], width, height);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            cam.rotation(r, c) = v[4 + r * 3 + c];
        }
        cam.translation(r) = v[13 + r];
    }
    try {
        cam.validate();
    } catch (const InvalidArgument &e) {
        throw ParseError(source, line, e.what());
    }
    return cam;
}

void write_camera(std::ostream &out, const char *name, const geometry::CameraCalibration &cam) {
    out << name << ' ' << cam.width << ' ' << cam.height << ' ' << cam.intrinsics(0, 0) << ' '
        << cam.intrinsics(1, 1) << ' ' << cam.intrinsics(0, 2) << ' ' << cam.intrinsics(1, 2);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out << ' ' << cam.rotation(r, c);
        }
    }
    for (int r = 0; r < 3; ++r) {
        out << ' ' << cam.translation(r);
    }
    out << '\n';
}

struct ZoomCalibration {
    int64_t beta = 0;
    int64_t width = 0;
    int64_t height = 0;
    struct Pair {
        double wide[4];
        double tele[4];
        Eigen::Matrix3d rotation;
        Eigen::Vector3d translation;
    };
    std::map<std::size_t, Pair> pairs;
};

ZoomCalibration parse_zoom_calibration(const fs::path &path) {
    if (!fs::exists(path)) {
        throw DataError("missing calibration file " + path.string());
    }
    const std::string text = read_text_file(path);
    const std::string source = path.string();
    ZoomCalibration cal;
    try {
        for_each_line(text, [&](std::size_t number, std::string_view line) {
            const auto fields = split_fields(line);
            if (fields.empty() || fields[0].front() == '#') {
                return;
            }
            if (fields[0] == "beta") {
                if (fields.size() != 2 || !parse_int(fields[1], cal.beta) || cal.beta < 1) {
                    throw ParseError(source, number, "beta must be a positive integer");
                }
            } else if (fields[0] == "size") {
                if (fields.size() != 3 || !parse_int(fields[1], cal.width) ||
                    !parse_int(fields[2], cal.height) || cal.width < 1 || cal.height < 1) {
                    throw ParseError(source, number, "size must be two positive integers");
                }
            } else if (fields[0] == "pair") {
                if (fields.size() != 22) {
                    throw ParseError(source, number,
                                     "pair lines have 22 fields, found " + std::to_string(fields.size()));
                }
                int64_t index = 0;
                if (!parse_int(fields[1], index) || index < 0) {
                    throw ParseError(source, number, "pair index must be a non-negative integer");
                }
                double v[20];
                for (int i = 0; i < 20; ++i) {
                    if (!parse_double(fields[static_cast<std::size_t>(i + 2)], v[i])) {
                        throw ParseError(source, number,
                                         "field " + std::to_string(i + 3) + " is not a finite number");
                    }
                }
                ZoomCalibration::Pair pair;
                for (int i = 0; i < 4; ++i) {
                    pair.wide[i] = v[i];
                    pair.tele[i] = v[4 + i];
                }
                for (int r = 0; r < 3; ++r) {
                    for (int c = 0; c < 3; ++c) {
                        pair.rotation(r, c) = v[8 + r * 3 + c];
                    }
                    pair.translation(r) = v[17 + r];
                }
                cal.pairs[static_cast<std::size_t>(index)] = pair;
            } else {
                throw ParseError(source, number, "unknown entry '" + std::string(fields[0]) + "'");
            }
        });
    } catch (const ParseError &e) {
        throw DataError(e.what());
    }
    if (cal.beta == 0 || cal.width == 0) {
        throw DataError(source + ": calibration needs both 'beta' and 'size' entries");
    }
    return cal;
}

std::string pair_file_name(std::size_t index) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << index << ".png";
    return name.str();
}

} // namespace

CameraPair parse_pair_calibration(const fs::path &path) {
    const std::string text = read_text_file(path);
    const std::string source = path.string();
    CameraPair pair;
    bool have_lr = false;
    bool have_ref = false;
    for_each_line(text, [&](std::size_t number, std::string_view line) {
        const auto fields = split_fields(line);
        if (fields.empty() || fields[0].front() == '#') {
            return;
        }
        if (fields[0] != "lr" && fields[0] != "ref") {
            throw ParseError(source, number, "unknown camera '" + std::string(fields[0]) + "'");
        }
        if (fields.size() != 19) {
            throw ParseError(source, number,
                             "camera lines have 19 fields, found " + std::to_string(fields.size()));
        }
        auto cam = parse_camera_fields(fields, 1, source, number);
        if (fields[0] == "lr") {
            pair.lr = cam;
            have_lr = true;
        } else {
            pair.ref = cam;
            have_ref = true;
        }
    });
    if (!have_lr || !have_ref) {
        throw ParseError(source, 0, "calibration needs both an 'lr' and a 'ref' camera");
    }
    return pair;
}

void write_pair_calibration(const fs::path &path, const CameraPair &pair) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << std::setprecision(17);
    out << "# camera width height fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3\n";
    write_camera(out, "lr", pair.lr);
    write_camera(out, "ref", pair.ref);
}

std::vector<std::size_t> optical_zoom_pair_indices(const fs::path &scene_dir) {
    if (!fs::is_directory(scene_dir) || fs::is_empty(scene_dir)) {
        throw DataError("optical zoom scene directory is missing or empty: " + scene_dir.string());
    }
    const auto cal = parse_zoom_calibration(scene_dir / "calibration.txt");
    std::vector<std::size_t> out;
    for (const auto &[index, pair] : cal.pairs) {
        out.push_back(index);
    }
    return out;
}

TrainingTuple load_optical_zoom_pair(const fs::path &scene_dir, std::size_t pair_index) {
    if (!fs::is_directory(scene_dir) || fs::is_empty(scene_dir)) {
        throw DataError("optical zoom scene directory is missing or empty: " + scene_dir.string());
    }
    const auto cal = parse_zoom_calibration(scene_dir / "calibration.txt");
    const auto it = cal.pairs.find(pair_index);
    if (it == cal.pairs.end()) {
        throw DataError("calibration has no entry for pair " + std::to_string(pair_index));
    }
    const auto wide_path = scene_dir / "wide" / pair_file_name(pair_index);
    const auto tele_path = scene_dir / "tele" / pair_file_name(pair_index);
    for (const auto &p : {wide_path, tele_path}) {
        if (!fs::exists(p)) {
            throw DataError("missing image " + p.string());
        }
    }
    const auto wide = load_png(wide_path);
    const auto tele = load_png(tele_path);
    const auto check_size = [&](const torch::Tensor &img, const fs::path &p) {
        if (img.size(2) != cal.width || img.size(1) != cal.height) {
            std::ostringstream msg;
            msg << p.string() << " is " << img.size(2) << "x" << img.size(1)
                << " but calibration states " << cal.width << "x" << cal.height;
            throw DataError(msg.str());
        }
    };
    check_size(wide, wide_path);
    check_size(tele, tele_path);
    if (cal.width % cal.beta != 0 || cal.height % cal.beta != 0) {
        std::ostringstream msg;
        msg << "beta mismatch: " << cal.width << "x" << cal.height << " is not divisible by beta "
            << cal.beta;
        throw DataError(msg.str());
    }

    const auto &pair = it->second;
    TrainingTuple tuple;
    tuple.gt = wide;
    tuple.ref = tele;
    tuple.lr = imaging::resample_bicubic(wide, {1, cal.beta});
    const auto c_gt =
        pixel_camera(pair.wide[0], pair.wide[1], pair.wide[2], pair.wide[3], cal.width, cal.height);
    tuple.c_lr = c_gt.rescaled(cal.width / cal.beta, cal.height / cal.beta);
    tuple.c_ref =
        pixel_camera(pair.tele[0], pair.tele[1], pair.tele[2], pair.tele[3], cal.width, cal.height);
    tuple.c_ref.rotation = pair.rotation;
    tuple.c_ref.translation = pair.translation;
    try {
        tuple.validate(cal.beta);
    } catch (const InvalidArgument &e) {
        throw DataError(std::string("optical zoom pair: ") + e.what());
    }
    return tuple;
}

} // namespace crossmpi::data
