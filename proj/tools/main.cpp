#include "txir/cli.hpp"

int main(int argc, char** argv) { return txir::cli_main(argc, argv); }
