#include "relnn/cli.hpp"

int main(int argc, char** argv) { return relnn::cli_main(argc, argv); }
