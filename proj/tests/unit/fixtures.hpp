#pragma once

#include <string>

#ifndef JOINTUD_FIXTURE_DIR
#error "JOINTUD_FIXTURE_DIR must be defined"
#endif

inline std::string fixture(const std::string& name) { return std::string(JOINTUD_FIXTURE_DIR) + "/" + name; }
