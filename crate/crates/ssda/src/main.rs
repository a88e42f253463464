fn main() {
    println!("ssda");
}
