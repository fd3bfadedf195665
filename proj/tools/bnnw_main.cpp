#include "bnnw/cli.hpp"

int main(int argc, char** argv) { return bnnw::run_cli(argc, argv); }
