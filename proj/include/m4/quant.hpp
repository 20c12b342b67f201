#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m4/matrix.hpp"

namespace m4 {

enum class NumericFormat { FP32, FP16, INT8, INT4 };

const char* format_name(NumericFormat f);
NumericFormat format_from_name(const std::string& name);
double bytes_per_param(NumericFormat f);

// Symmetric per-row absmax quantization. INT8 uses Q=127, INT4 uses Q=7
// with two codes per byte (low nibble first, rows padded to even length).
// FP16 is stored as raw binary16 words. Dequantized value = code * row scale.
struct QuantizedWeights {
    NumericFormat format = NumericFormat::INT8;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> codes;       // INT8: rows*cols; INT4: packed nibbles
    std::vector<std::uint16_t> half;      // FP16 payload
    std::vector<double> scales;           // one per row (INT8/INT4)

    std::size_t packed_row_bytes() const { return (cols + 1) / 2; }
};

QuantizedWeights quantize(const Matrix& weights, NumericFormat format);
Matrix dequantize(const QuantizedWeights& q);

}  // namespace m4
