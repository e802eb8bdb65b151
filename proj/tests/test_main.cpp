#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <spdlog/spdlog.h>

namespace {
const int quiet = [] {
    spdlog::set_level(spdlog::level::err);
    return 0;
}();
} // namespace
