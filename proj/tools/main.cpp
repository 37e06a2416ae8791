#include "tcsa/cli.hpp"

int main(int argc, char** argv) { return tcsa::cli::run(argc, argv); }
