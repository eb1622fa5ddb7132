#pragma once

#include <string>
#include <vector>

namespace localgrad::cli {

int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace localgrad::cli
