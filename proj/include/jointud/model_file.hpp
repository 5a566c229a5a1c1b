// Binary model file.
//
//   "CMBK" | u16 version | u32 header length | JSON header (UTF-8)
//   then per parameter until EOF:
//   u32 name length | name | u8 rank | u32 extent x rank | float32 data
//
// All integers and floats are little-endian.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "jointud/model.hpp"

namespace jointud {

inline constexpr std::uint16_t kModelFormatVersion = 1;

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_model(const Model& model, std::ostream& out);
void save_model_file(const Model& model, const std::string& path);
Model load_model(std::istream& in);
Model load_model_file(const std::string& path);

}  // namespace jointud
