#include "hgnn/cli.hpp"

int main(int argc, char** argv) { return hgnn::cli::run(argc, argv); }
