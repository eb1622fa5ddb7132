#include "localgrad/cli.hpp"

int main(int argc, char** argv) { return localgrad::cli::run(argc, argv); }
