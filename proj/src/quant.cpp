#include "m4/quant.hpp"

#include <cmath>

namespace m4 {

const char* format_name(NumericFormat f) {
    switch (f) {
        case NumericFormat::FP32: return "FP32";
        case NumericFormat::FP16: return "FP16";
        case NumericFormat::INT8: return "INT8";
        case NumericFormat::INT4: return "INT4";
    }
    return "?";
}

NumericFormat format_from_name(const std::string& name) {
    if (name == "FP32" || name == "fp32") return NumericFormat::FP32;
    if (name == "FP16" || name == "fp16") return NumericFormat::FP16;
    if (name == "INT8" || name == "int8") return NumericFormat::INT8;
    if (name == "INT4" || name == "int4") return NumericFormat::INT4;
    fail(errc::parse, "unknown numeric format: " + name);
}

double bytes_per_param(NumericFormat f) {
    switch (f) {
        case NumericFormat::FP32: return 4.0;
        case NumericFormat::FP16: return 2.0;
        case NumericFormat::INT8: return 1.0;
        case NumericFormat::INT4: return 0.5;
    }
    return 4.0;
}

namespace {

std::int8_t clamp_code(long v, int q) {
    if (v > q) v = q;
    if (v < -q) v = -q;
    return static_cast<std::int8_t>(v);
}

void quantize_int(const Matrix& w, int q, QuantizedWeights& out) {
    out.scales.resize(w.rows);
    std::vector<std::int8_t> flat(w.rows * w.cols);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double amax = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) amax = std::max(amax, std::fabs(w.at(r, c)));
        const double s = amax / q;
        out.scales[r] = s;
        for (std::size_t c = 0; c < w.cols; ++c) {
            flat[r * w.cols + c] = s == 0.0 ? 0 : clamp_code(std::lround(w.at(r, c) / s), q);
        }
    }
    if (q == 127) {
        out.codes = std::move(flat);
        return;
    }
    // INT4: two codes per byte, low nibble first, rows padded to even length
    out.codes.assign(w.rows * out.packed_row_bytes(), 0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            const auto nibble = static_cast<std::uint8_t>(flat[r * w.cols + c] & 0x0f);
            auto& slot = reinterpret_cast<std::uint8_t&>(out.codes[r * out.packed_row_bytes() + c / 2]);
            if (c % 2 == 0)
                slot = static_cast<std::uint8_t>((slot & 0xf0) | nibble);
            else
                slot = static_cast<std::uint8_t>((slot & 0x0f) | (nibble << 4));
        }
    }
}

std::int8_t unpack_nibble(std::uint8_t byte, bool high) {
    std::uint8_t n = high ? (byte >> 4) : (byte & 0x0f);
    return static_cast<std::int8_t>(n >= 8 ? int(n) - 16 : int(n));
}

}  // namespace

QuantizedWeights quantize(const Matrix& weights, NumericFormat format) {
    if (weights.empty()) fail(errc::invalid_argument, "quantize: empty matrix");
    if (!weights.finite()) fail(errc::invalid_argument, "quantize: non-finite weights");
    if (format == NumericFormat::FP32) fail(errc::unsupported, "quantize: FP32 is the source format");

    QuantizedWeights out;
    out.format = format;
    out.rows = weights.rows;
    out.cols = weights.cols;
    switch (format) {
        case NumericFormat::FP16:
            out.half.resize(weights.size());
            for (std::size_t i = 0; i < weights.size(); ++i) out.half[i] = fp16_from_double(weights.data[i]);
            break;
        case NumericFormat::INT8:
            quantize_int(weights, 127, out);
            break;
        case NumericFormat::INT4:
            quantize_int(weights, 7, out);
            break;
        default:
            fail(errc::unsupported, "quantize: unsupported format");
    }
    return out;
}

Matrix dequantize(const QuantizedWeights& q) {
    Matrix out(q.rows, q.cols);
    switch (q.format) {
        case NumericFormat::FP16: {
            if (q.half.size() != q.rows * q.cols) fail(errc::parse, "dequantize: bad FP16 payload size");
            for (std::size_t i = 0; i < q.half.size(); ++i) out.data[i] = fp16_to_double(q.half[i]);
            break;
        }
        case NumericFormat::INT8: {
            if (q.codes.size() != q.rows * q.cols || q.scales.size() != q.rows)
                fail(errc::parse, "dequantize: bad INT8 payload size");
            for (std::size_t r = 0; r < q.rows; ++r)
                for (std::size_t c = 0; c < q.cols; ++c) out.at(r, c) = q.codes[r * q.cols + c] * q.scales[r];
            break;
        }
        case NumericFormat::INT4: {
            if (q.codes.size() != q.rows * q.packed_row_bytes() || q.scales.size() != q.rows)
                fail(errc::parse, "dequantize: corrupted INT4 packing");
            for (std::size_t r = 0; r < q.rows; ++r) {
                const auto* row = reinterpret_cast<const std::uint8_t*>(q.codes.data()) + r * q.packed_row_bytes();
                for (std::size_t c = 0; c < q.cols; ++c)
                    out.at(r, c) = unpack_nibble(row[c / 2], c % 2 == 1) * q.scales[r];
            }
            break;
        }
        default:
            fail(errc::unsupported, "dequantize: unsupported format");
    }
    return out;
}

}  // namespace m4
