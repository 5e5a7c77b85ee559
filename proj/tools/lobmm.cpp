#include "cli.hpp"

int main(int argc, char** argv) { return lobmm::cli::lobmm_main({argv, argv + argc}); }
