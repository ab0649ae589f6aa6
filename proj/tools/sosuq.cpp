#include "sosuq/cli.hpp"

int main(int argc, char** argv) { return sosuq::cli::run_main(argc, argv); }
